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


// Minimal library use: one seeded run of each defense on generated data.

#include <iostream>

#include "cape/cape.hpp"

int main() {
  cape::ExperimentConfig cfg;
  cfg.data.synthetic_n = 1000;
  cfg.runs = 1;
  cfg.train.epochs = 10;
  const auto report = cape::run_experiment(cfg);
  std::cout << cape::render_table(report);
  return report.valid ? 0 : 1;
}
