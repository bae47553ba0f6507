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


#ifndef CAPE_CAPE_HPP_
#define CAPE_CAPE_HPP_

#include "cape/datakit.hpp"
#include "cape/error.hpp"
#include "cape/eval.hpp"
#include "cape/experiment.hpp"
#include "cape/featurizer.hpp"
#include "cape/gradcheck.hpp"
#include "cape/matrix.hpp"
#include "cape/model.hpp"
#include "cape/privacy.hpp"
#include "cape/rng.hpp"

#endif  // CAPE_CAPE_HPP_
