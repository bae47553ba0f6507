// Copyright 2026 The CAPE Embeddings Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CAPE_ERROR_HPP_
#define CAPE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace cape {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (JSON, CSV). Message carries line/column when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input whose values violate a documented range or shape.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace cape

#endif  // CAPE_ERROR_HPP_
