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

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "fanbeats/align.hpp"
#include "fanbeats/data.hpp"
#include "fanbeats/error.hpp"
#include "fanbeats/model.hpp"

namespace fanbeats {
namespace {

namespace fs = std::filesystem;

std::string write_temp(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("fanbeats_data_" + name);
  std::ofstream(p) << body;
  return p.string();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kUsage;
}

TEST(Csv, HeaderOnlyIsEmpty) {
  EXPECT_TRUE(load_series_csv(write_temp("h.csv", "series_id,domain_id,t,value\n")).series.empty());
}

TEST(Csv, SingleSeries) {
  const auto c = load_series_csv(
      write_temp("one.csv", "series_id,domain_id,t,value\ns,d,1,1.5\ns,d,2,2.5\ns,d,3,-1\n"));
  ASSERT_EQ(c.series.size(), 1u);
  EXPECT_EQ(c.series[0].values, (std::vector<double>{1.5, 2.5, -1.0}));
  EXPECT_EQ(c.series[0].domain_id, "d");
}

TEST(Csv, InterleavedSeriesKeepRowOrder) {
  const auto c = load_series_csv(write_temp(
      "two.csv",
      "series_id,domain_id,t,value,frequency\na,x,1,1,daily\nb,y,1,10,\na,x,2,2,daily\nb,y,"
      "2,20,\na,x,10,3,daily\n"));
  ASSERT_EQ(c.series.size(), 2u);
  EXPECT_EQ(c.series[0].values, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(c.series[1].values, (std::vector<double>{10, 20}));
  EXPECT_EQ(c.series[0].frequency, "daily");
  EXPECT_EQ(c.domains(), (std::vector<std::string>{"x", "y"}));
}

TEST(Csv, Errors) {
  const std::string head = "series_id,domain_id,t,value\n";
  try {
    load_series_csv(write_temp("bad.csv", head + "a,x,1,1\na,x,2\n"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([&] { load_series_csv(write_temp("nan.csv", head + "a,x,1,nan\n")); }),
            ErrorKind::kData);
  EXPECT_EQ(kind_of([&] { load_series_csv(write_temp("inf.csv", head + "a,x,1,1e999\n")); }),
            ErrorKind::kData);
  EXPECT_EQ(kind_of([&] { load_series_csv(write_temp("txt.csv", head + "a,x,1,abc\n")); }),
            ErrorKind::kParse);
  EXPECT_EQ(kind_of([&] { load_series_csv(write_temp("ord.csv", head + "a,x,2,1\na,x,1,1\n")); }),
            ErrorKind::kParse);
  EXPECT_EQ(kind_of([&] { load_series_csv(write_temp("hdr.csv", "a,b,c\n")); }),
            ErrorKind::kParse);
  EXPECT_EQ(kind_of([] { load_series_csv("/nonexistent/fanbeats.csv"); }), ErrorKind::kIo);
}

TEST(Csv, RoundTripThroughSave) {
  SynthSpec spec;
  spec.domains.push_back({"a", "s", 2, 30, 1, 2, 0, 0.1, {5}, 1, 2, 0.3, 0, 1.0});
  const auto c = synth_generate(spec, 3);
  const std::string path = write_temp("rt.csv", "");
  save_series_csv(c, path);
  const auto back = load_series_csv(path);
  ASSERT_EQ(back.series.size(), c.series.size());
  for (std::size_t i = 0; i < c.series.size(); ++i) EXPECT_EQ(back.series[i].values, c.series[i].values);
}

TEST(Windows, Counts) {
  const std::vector<double> v{0, 1, 2, 3, 4};
  EXPECT_EQ(make_windows(v, 2, 1).size(), 3u);
  EXPECT_EQ(make_windows(v, 3, 2).size(), 1u);
  EXPECT_EQ(make_windows(v, 4, 2).size(), 0u);
  for (std::size_t len = 0; len < 30; ++len)
    for (std::size_t stride = 1; stride < 5; ++stride) {
      const std::vector<double> s(len, 1.0);
      const std::size_t expect = len < 5 ? 0 : (len - 5) / stride + 1;
      EXPECT_EQ(make_windows(s, 3, 2, stride).size(), expect);
    }
  EXPECT_THROW(make_windows(v, 0, 1), Error);
}

TEST(Windows, PreserveValues) {
  std::vector<double> v(40);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.3 * static_cast<double>(i));
  for (const Instance& w : make_windows(v, 7, 3, 2)) {
    std::vector<double> joined = w.x;
    joined.insert(joined.end(), w.y.begin(), w.y.end());
    EXPECT_TRUE(std::equal(joined.begin(), joined.end(), v.begin() + static_cast<long>(w.offset)));
  }
}

SeriesCollection toy_collection(std::size_t series, std::size_t length) {
  SynthSpec spec;
  spec.domains.push_back({"d", "s", series, length, 5, 9, 0, 0.1, {}, 0, 0, 0.5, 0, 1.0});
  return synth_generate(spec, 1);
}

TEST(Dataset, SplitSizes) {
  EXPECT_EQ(split_sizes(10), (std::vector<std::size_t>{7, 1, 2}));
  EXPECT_EQ(split_sizes(2000), (std::vector<std::size_t>{1400, 200, 400}));
  DatasetOptions o;
  o.alpha = 4;
  o.beta = 2;
  o.n_instances = 10;
  const auto ds = build_domain_dataset(toy_collection(1, 40), "d", "s", o, 3);
  EXPECT_EQ(ds.train.size(), 7u);
  EXPECT_EQ(ds.val.size(), 1u);
  EXPECT_EQ(ds.test.size(), 2u);
}

TEST(Dataset, DisjointExhaustiveAndDeterministic) {
  DatasetOptions o;
  o.alpha = 6;
  o.beta = 2;
  o.n_instances = 100;
  const auto c = toy_collection(3, 60);
  const auto a = build_domain_dataset(c, "d", "s", o, 11);
  const auto b = build_domain_dataset(c, "d", "s", o, 11);
  std::set<std::size_t> all;
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest})
    for (std::size_t i : a.split(s)) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), a.instances.size());
  EXPECT_EQ(a.train, b.train);
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    EXPECT_EQ(a.instances[i].x, b.instances[i].x);
    const auto& src = c.series[a.instances[i].series].values;
    EXPECT_TRUE(std::equal(a.instances[i].x.begin(), a.instances[i].x.end(),
                           src.begin() + static_cast<long>(a.instances[i].offset)));
  }
  // Without replacement no window is drawn twice.
  std::set<std::pair<std::size_t, std::size_t>> keys;
  for (const Instance& inst : a.instances) EXPECT_TRUE(keys.insert({inst.series, inst.offset}).second);
  EXPECT_FALSE(a.resampled);
}

TEST(Dataset, ShortfallAndReplacement) {
  DatasetOptions o;
  o.alpha = 4;
  o.beta = 2;
  o.n_instances = 50;
  const auto c = toy_collection(1, 20);  // 15 windows
  try {
    build_domain_dataset(c, "d", "s", o, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("short by 35"), std::string::npos) << e.what();
  }
  o.with_replacement = true;
  const auto ds = build_domain_dataset(c, "d", "s", o, 1);
  EXPECT_TRUE(ds.resampled);
  EXPECT_EQ(ds.instances.size(), 50u);
  EXPECT_EQ(kind_of([&] { build_domain_dataset(c, "missing", "s", o, 1); }), ErrorKind::kConfig);
}

TEST(Dataset, StrictSplitSeparatesSeries) {
  DatasetOptions o;
  o.alpha = 4;
  o.beta = 2;
  o.n_instances = 40;
  o.strict_split = true;
  o.with_replacement = true;
  const auto ds = build_domain_dataset(toy_collection(10, 30), "d", "s", o, 5);
  std::set<std::size_t> train_series, other;
  for (std::size_t i : ds.train) train_series.insert(ds.instances[i].series);
  for (std::size_t i : ds.val) other.insert(ds.instances[i].series);
  for (std::size_t i : ds.test) other.insert(ds.instances[i].series);
  for (std::size_t s : other) EXPECT_EQ(train_series.count(s), 0u);
  EXPECT_EQ(ds.train.size(), 28u);
  EXPECT_THROW(build_domain_dataset(toy_collection(2, 30), "d", "s", o, 5), Error);
}

SuperdomainMap paper_map() {
  return {{"finance", {"commodity", "income", "interest", "exchange"}},
          {"weather", {"pressure", "rain", "temperature", "wind"}}};
}

TEST(Scenario, Examples) {
  const auto map = paper_map();
  const Scenario idg = make_scenario(map, ScenarioKind::kIdg, "wind", 3);
  EXPECT_EQ(idg.sources, (std::vector<std::string>{"pressure", "rain", "temperature"}));
  const Scenario odg{ScenarioKind::kOdg, {"pressure", "rain", "temperature"}, "commodity"};
  EXPECT_TRUE(is_valid_scenario(map, odg));
  const Scenario cdg{ScenarioKind::kCdg, {"commodity", "income", "pressure"}, "rain"};
  EXPECT_TRUE(is_valid_scenario(map, cdg));
  const Scenario cdg_two_home{ScenarioKind::kCdg, {"commodity", "pressure", "wind"}, "rain"};
  EXPECT_FALSE(is_valid_scenario(map, cdg_two_home));
  EXPECT_FALSE(is_valid_scenario(map, Scenario{ScenarioKind::kOdg, {"rain", "income"}, "commodity"}));
  EXPECT_FALSE(is_valid_scenario(map, Scenario{ScenarioKind::kIdg, {"rain", "wind"}, "rain"}));
  const Scenario made = make_scenario(map, ScenarioKind::kCdg, "rain", 3);
  const auto same = std::count_if(made.sources.begin(), made.sources.end(), [&](const auto& s) {
    return superdomain_of(map, s) == "weather";
  });
  EXPECT_EQ(same, 1);
  EXPECT_EQ(kind_of([&] { make_scenario(map, ScenarioKind::kIdg, "wind", 4); }), ErrorKind::kConfig);
  EXPECT_EQ(parse_scenario_kind("odg"), ScenarioKind::kOdg);
}

// Validity predicates written independently of the enumerator.
bool odg_ok(const SuperdomainMap& map, const Scenario& s) {
  const std::string first = superdomain_of(map, s.sources[0]);
  if (first == superdomain_of(map, s.target)) return false;
  for (const auto& d : s.sources)
    if (superdomain_of(map, d) != first) return false;
  return true;
}

TEST(Scenario, EnumerationIsValidAndComplete) {
  const auto map = paper_map();
  const auto odg = enumerate_scenarios(map, ScenarioKind::kOdg, 3);
  const auto cdg = enumerate_scenarios(map, ScenarioKind::kCdg, 3);
  const auto idg = enumerate_scenarios(map, ScenarioKind::kIdg, 3);
  EXPECT_EQ(odg.size(), 8u * 4u);       // C(4,3) per target
  EXPECT_EQ(cdg.size(), 8u * 3u * 6u);  // 3 siblings x C(4,2) foreign pairs
  EXPECT_EQ(idg.size(), 8u);
  for (const auto& s : odg) {
    EXPECT_TRUE(is_valid_scenario(map, s));
    EXPECT_TRUE(odg_ok(map, s));
  }
  for (const auto& s : cdg) {
    EXPECT_TRUE(is_valid_scenario(map, s));
    const std::string home = superdomain_of(map, s.target);
    int same = 0;
    for (const auto& d : s.sources) {
      EXPECT_NE(d, s.target);
      same += superdomain_of(map, d) == home;
    }
    EXPECT_EQ(same, 1);
  }
  for (const auto& s : idg) {
    EXPECT_TRUE(is_valid_scenario(map, s));
    for (const auto& d : s.sources) {
      EXPECT_EQ(superdomain_of(map, d), superdomain_of(map, s.target));
      EXPECT_NE(d, s.target);
    }
  }
}

TEST(Synth, ConstantAndDeterministic) {
  SynthSpec spec;
  spec.domains.push_back({"c", "s", 2, 50, 3, 3, 0, 0, {}, 0, 0, 0, 0, 2.0});
  const auto c = synth_generate(spec, 9);
  for (double v : c.series[0].values) EXPECT_EQ(v, 6.0);
  const auto spec2 = desk_synth_spec();
  const auto a = synth_generate(spec2, 4), b = synth_generate(spec2, 4);
  ASSERT_EQ(a.series.size(), b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) EXPECT_EQ(a.series[i].values, b.series[i].values);
  EXPECT_THROW(synth_generate(SynthSpec{}, 1), Error);
}

TEST(Synth, SpectralPeakAtPeriod) {
  SynthSpec spec;
  spec.domains.push_back({"p", "s", 1, 240, 0, 0, 0, 0, {12}, 1, 1, 0, 0, 1.0});
  const auto v = synth_generate(spec, 2).series[0].values;
  const std::size_t n = v.size();
  std::size_t best = 0;
  double best_mag = -1;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t)
      acc += v[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t) / double(n));
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  EXPECT_EQ(best, n / 12);
}

TEST(Synth, ScaleRemovalSanity) {
  SynthSpec spec;
  spec.domains.push_back({"small", "s", 4, 200, 5, 8, 0, 0, {10}, 1, 2, 0.2, 0, 1.0});
  spec.domains.push_back({"large", "s", 4, 200, 5, 8, 0, 0, {10}, 1, 2, 0.2, 0, 100.0});
  const auto c = synth_generate(spec, 6);
  DatasetOptions o;
  o.alpha = 12;
  o.beta = 4;
  o.n_instances = 64;
  const auto small = build_domain_dataset(c, "small", "s", o, 1);
  const auto large = build_domain_dataset(c, "large", "s", o, 1);
  const auto mean = [](const Tensor& t) {
    double s = 0;
    for (double v : t.values()) s += v;
    return s / static_cast<double>(t.size());
  };
  const Batch bs = split_batch(small, Split::kTrain), bl = split_batch(large, Split::kTrain);
  const double ratio = mean(bl.x) / mean(bs.x);
  EXPECT_GT(ratio, 70.0);
  EXPECT_LT(ratio, 140.0);
  ModelConfig mc;
  mc.stacks = 2;
  mc.blocks = 2;
  mc.layers = 2;
  mc.alpha = 12;
  mc.beta = 4;
  mc.gamma = 16;
  NBeatsModel model = NBeatsModel::create(mc, 3);
  const Tensor fs = normalize(stack_feature(bs.x, model, 0), Normalizer::kSoftmax);
  const Tensor fl = normalize(stack_feature(bl.x, model, 0), Normalizer::kSoftmax);
  // Softmax taps stay on the simplex for both scales, so their ranges overlap.
  EXPECT_LE(*std::max_element(fs.values().begin(), fs.values().end()), 1.0);
  EXPECT_LE(*std::max_element(fl.values().begin(), fl.values().end()), 1.0);
  EXPECT_GE(*std::min_element(fl.values().begin(), fl.values().end()), 0.0);
  EXPECT_LT(*std::min_element(fl.values().begin(), fl.values().end()),
            *std::max_element(fs.values().begin(), fs.values().end()));
}

TEST(Batch, SamplingContract) {
  DatasetOptions o;
  o.alpha = 4;
  o.beta = 2;
  o.n_instances = 30;
  const auto ds = build_domain_dataset(toy_collection(1, 60), "d", "s", o, 2);
  std::mt19937_64 r1(8), r2(8);
  const Batch a = sample_batch(ds, Split::kTrain, 5, r1), b = sample_batch(ds, Split::kTrain, 5, r2);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  std::set<std::vector<double>> members;
  for (std::size_t i : ds.train) members.insert(ds.instances[i].x);
  std::mt19937_64 rng(1);
  for (int draw = 0; draw < 1000; ++draw) {
    const Batch one = sample_batch(ds, Split::kTrain, 1, rng);
    EXPECT_EQ(members.count(std::vector<double>(one.x.values().begin(), one.x.values().end())), 1u);
  }
  DomainDataset single = ds;
  single.val = {ds.val[0]};
  const Batch only = sample_batch(single, Split::kVal, 1, rng);
  EXPECT_EQ(std::vector<double>(only.x.values().begin(), only.x.values().end()),
            ds.instances[ds.val[0]].x);
  DomainDataset empty = ds;
  empty.test.clear();
  EXPECT_EQ(kind_of([&] { sample_batch(empty, Split::kTest, 2, rng); }), ErrorKind::kConfig);
}

}  // namespace
}  // namespace fanbeats
