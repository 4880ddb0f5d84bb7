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

#ifndef FANBEATS_ERROR_HPP
#define FANBEATS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace fanbeats {

enum class ErrorKind {
  kDimension,
  kDomain,
  kNumeric,
  kRank,
  kNoGraph,
  kEmptyReduction,
  kOracle,
  kConfig,
  kParse,
  kData,
  kSize,
  kIo,
  kUsage,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so the
/// C boundary and the CLI can map it onto a stable status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace fanbeats

#endif  // FANBEATS_ERROR_HPP
