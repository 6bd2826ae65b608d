// Copyright (c) 2026 The tlasa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace tlasa {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and still print a precise category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

#define TLASA_DEFINE_ERROR(Name, tag)                          \
  class Name : public Error {                                  \
   public:                                                     \
    using Error::Error;                                        \
    const char* category() const noexcept override { return tag; } \
  };

TLASA_DEFINE_ERROR(DimensionError, "dimension")
TLASA_DEFINE_ERROR(DomainError, "domain")
TLASA_DEFINE_ERROR(DegenerateInputError, "degenerate-input")
TLASA_DEFINE_ERROR(ConfigError, "configuration")
TLASA_DEFINE_ERROR(NumericError, "numeric")
TLASA_DEFINE_ERROR(IoError, "io")
TLASA_DEFINE_ERROR(IntegrityError, "integrity")
TLASA_DEFINE_ERROR(DiagnosticsError, "diagnostics")

#undef TLASA_DEFINE_ERROR

}  // namespace tlasa
