// Copyright 2026 The fanbeats Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "fanbeats/error.hpp"
#include "fanbeats/model.hpp"

namespace fanbeats {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'A', 'N', 'B', 'E', 'A', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(ErrorKind::kIo, "truncated checkpoint " + path);
  return v;
}

std::string manifest_text(const ModelConfig& c, std::uint64_t seed) {
  std::ostringstream m;
  m << "variant=" << to_string(c.variant) << "\n"
    << "M=" << c.stacks << "\n"
    << "L=" << c.blocks << "\n"
    << "layers=" << c.layers << "\n"
    << "alpha=" << c.alpha << "\n"
    << "beta=" << c.beta << "\n"
    << "gamma=" << c.gamma << "\n"
    << "nhits_kernel=" << c.nhits_kernel << "\n"
    << "trend_degree=" << c.trend_degree << "\n"
    << "harmonics=" << c.harmonics << "\n"
    << "dlinear_window=" << c.dlinear_window << "\n"
    << "legacy_residual=" << (c.legacy_residual ? 1 : 0) << "\n"
    << "zero_forecast_head=" << (c.zero_forecast_head ? 1 : 0) << "\n"
    << "seed=" << seed << "\n";
  return m.str();
}

ModelConfig parse_manifest(const std::string& text, std::uint64_t* seed,
                           const std::string& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kParse, "bad manifest line in " + path);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      fail(ErrorKind::kParse, std::string("manifest of ") + path + " lacks '" + key + "'");
    }
    return it->second;
  };
  auto count = [&](const char* key) {
    return static_cast<std::size_t>(std::stoull(need(key)));
  };
  ModelConfig c;
  try {
    c.variant = parse_variant(need("variant"));
    c.stacks = count("M");
    c.blocks = count("L");
    c.layers = count("layers");
    c.alpha = count("alpha");
    c.beta = count("beta");
    c.gamma = count("gamma");
    c.nhits_kernel = count("nhits_kernel");
    c.trend_degree = count("trend_degree");
    c.harmonics = count("harmonics");
    c.dlinear_window = count("dlinear_window");
    c.legacy_residual = count("legacy_residual") != 0;
    c.zero_forecast_head = count("zero_forecast_head") != 0;
    if (seed) *seed = std::stoull(need("seed"));
  } catch (const std::logic_error& e) {
    fail(ErrorKind::kParse, "bad manifest value in " + path + ": " + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(Forecaster& model, const std::string& path, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string manifest = manifest_text(model.config(), seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(manifest.size()));
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const ParamRef& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.value->shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value->data()),
              static_cast<std::streamsize>(p.value->size() * sizeof(double)));
  }
  if (!out) fail(ErrorKind::kIo, "failed writing checkpoint " + path);
}

std::unique_ptr<Forecaster> load_checkpoint(const std::string& path, std::uint64_t* seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::kParse, path + " is not a fanbeats checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) {
    fail(ErrorKind::kParse, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_len = get<std::uint32_t>(in, path);
  std::string manifest(manifest_len, '\0');
  in.read(manifest.data(), manifest_len);
  if (!in) fail(ErrorKind::kIo, "truncated checkpoint " + path);
  const ModelConfig config = parse_manifest(manifest, seed, path);

  auto model = make_forecaster(config, 0);
  std::map<std::string, Tensor*> slots;
  for (const ParamRef& p : model->parameters()) slots[p.name] = p.value;

  const auto count = get<std::uint32_t>(in, path);
  if (count != slots.size()) {
    fail(ErrorKind::kParse, path + " holds " + std::to_string(count) +
                                " arrays, model expects " + std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 2) fail(ErrorKind::kParse, "array '" + name + "' has rank > 2");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    auto it = slots.find(name);
    if (it == slots.end()) fail(ErrorKind::kParse, "unexpected array '" + name + "'");
    if (it->second->shape() != shape) {
      fail(ErrorKind::kDimension, "array '" + name + "' has shape " + shape_string(shape) +
                                      ", model expects " +
                                      shape_string(it->second->shape()));
    }
    in.read(reinterpret_cast<char*>(it->second->data()),
            static_cast<std::streamsize>(it->second->size() * sizeof(double)));
    if (!in) fail(ErrorKind::kIo, "truncated checkpoint " + path);
  }
  return model;
}

}  // namespace fanbeats
