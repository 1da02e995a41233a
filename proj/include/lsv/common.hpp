// lsv/common.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef LSV_COMMON_HPP_
#define LSV_COMMON_HPP_

#include <sstream>
#include <stdexcept>
#include <string>

namespace lsv {

// Error taxonomy shared by the whole library.  The CLI maps kinds onto its
// exit-code contract: config-class errors -> 2, numeric aborts -> 3,
// missing/corrupt artifacts -> 4.
enum class ErrorKind {
  kConfig,       // bad option, bad dimension request, unsupported combination
  kDimension,    // shape mismatch between tensors
  kLength,       // sequence too short for the requested operation
  kLabel,        // class label out of range
  kState,        // object used before required state exists
  kDeterminism,  // a loss function evaluated twice gave different values
  kCapacity,     // request exceeds what the data can provide
  kFormat,       // malformed file on disk
  kLookup,       // a referenced artifact (utterance, file) is missing
  kNumeric,      // NaN/Inf where finite values are required
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

inline void StrAppend(std::ostringstream&) {}

template <typename T, typename... Rest>
void StrAppend(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  StrAppend(os, rest...);
}

}  // namespace detail

// Str("rows=", r, " cols=", c) -> std::string.  Used for error messages.
template <typename... Args>
std::string Str(const Args&... args) {
  std::ostringstream os;
  os.precision(17);
  detail::StrAppend(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void Throw(ErrorKind kind, const Args&... args) {
  throw Error(kind, Str(args...));
}

template <typename... Args>
void Require(bool cond, ErrorKind kind, const Args&... args) {
  if (!cond) Throw(kind, args...);
}

}  // namespace lsv

#endif  // LSV_COMMON_HPP_
