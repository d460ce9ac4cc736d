// Copyright 2026 The vprank Authors.
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vpr {

#ifdef VPR_VERSION
inline constexpr std::string_view kVersion = VPR_VERSION;
#else
inline constexpr std::string_view kVersion = "0.1.0";
#endif

enum class ErrorCode {
  kIo,                 // file missing, unreadable, or unwritable
  kUsage,              // bad flags or arguments
  kFormat,             // container bytes do not parse
  kInvalidArgument,    // precondition on a value failed
  kDimensionMismatch,
  kProtocolMismatch,   // geo-tag kind does not fit the evaluation protocol
  kNonFinite,
  kDegenerate,         // zero variance, zero vector after projection
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kProtocolMismatch: return "protocol mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kDegenerate: return "degenerate";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

/// Process exit status for an error: 2 for I/O and usage, 1 for domain failures.
inline int exit_code_for(ErrorCode code) {
  return (code == ErrorCode::kIo || code == ErrorCode::kUsage) ? 2 : 1;
}

}  // namespace vpr
