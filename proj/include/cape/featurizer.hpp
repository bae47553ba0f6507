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


#ifndef CAPE_FEATURIZER_HPP_
#define CAPE_FEATURIZER_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cape/datakit.hpp"
#include "cape/error.hpp"
#include "cape/matrix.hpp"
#include "cape/rng.hpp"

namespace cape {

using EmbeddingVector = std::vector<double>;

enum class FeaturizerKind { kHashedBow, kPrecomputed };

struct FeaturizerConfig {
  FeaturizerKind kind = FeaturizerKind::kHashedBow;
  std::size_t dimension = 64;
  std::uint64_t hash_seed = 17;
  std::string source_path;
};

inline void validate(const FeaturizerConfig& cfg) {
  if (cfg.dimension < 1) throw ValidationError("featurizer dimension must be >= 1");
  if (cfg.kind == FeaturizerKind::kPrecomputed && cfg.source_path.empty()) {
    throw ValidationError("precomputed featurizer needs a source_path");
  }
}

// Whitespace split, ASCII lowercase. Non-ASCII bytes pass through untouched.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
        c == '\v') {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    current += c;
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// Unit-norm pseudo-random Gaussian direction for one token, seeded by
// mix(hash_seed, FNV-1a(token)).
inline EmbeddingVector token_vector(std::string_view token,
                                    std::uint64_t hash_seed,
                                    std::size_t dimension) {
  NoiseRng rng(derive_seed(hash_seed, fnv1a64(token)));
  EmbeddingVector v(dimension);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = rng.gaussian();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

// Mean of the token vectors; the empty text maps to the zero vector.
inline EmbeddingVector embed_hashed_bow(std::string_view text,
                                        const FeaturizerConfig& cfg) {
  if (cfg.kind != FeaturizerKind::kHashedBow) {
    throw ValidationError("embed_hashed_bow called with a non-hashed config");
  }
  validate(cfg);
  EmbeddingVector out(cfg.dimension, 0.0);
  auto tokens = tokenize(text);
  if (tokens.empty()) return out;
  // Distinct tokens in sorted order, each weighted by count / n: the
  // summation order is independent of token order, and a text made of one
  // repeated token embeds to exactly that token's vector.
  std::sort(tokens.begin(), tokens.end());
  const double n = static_cast<double>(tokens.size());
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t j = i;
    while (j < tokens.size() && tokens[j] == tokens[i]) ++j;
    const double weight = static_cast<double>(j - i) / n;
    const auto v = token_vector(tokens[i], cfg.hash_seed, cfg.dimension);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * v[k];
    i = j;
  }
  return out;
}

// Precomputed CSV: one row per example, `dimension` comma-separated floats,
// no header.
inline std::vector<EmbeddingVector> read_embeddings_csv(
    std::istream& in, std::size_t dimension) {
  std::vector<EmbeddingVector> rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    EmbeddingVector v;
    v.reserve(dimension);
    std::size_t col = 0;
    std::size_t pos = 0;
    for (;;) {
      ++col;
      const std::size_t comma = line.find(',', pos);
      std::string_view cell(line.data() + pos,
                            (comma == std::string::npos ? line.size() : comma) -
                                pos);
      while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
      while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
      if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
      double value = 0.0;
      const auto [ptr, ec] =
          std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() ||
          ptr != cell.data() + cell.size()) {
        throw ParseError("non-numeric cell at row " + std::to_string(row) +
                         ", column " + std::to_string(col) + ": '" +
                         std::string(cell) + "'");
      }
      if (!std::isfinite(value)) {
        throw ValidationError("non-finite value at row " +
                              std::to_string(row) + ", column " +
                              std::to_string(col));
      }
      v.push_back(value);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (v.size() != dimension) {
      throw ValidationError("embedding dimension mismatch at row " +
                            std::to_string(row) + ": expected " +
                            std::to_string(dimension) + ", found " +
                            std::to_string(v.size()));
    }
    rows.push_back(std::move(v));
  }
  return rows;
}

// Shortest round-trip formatting; reading the output back is bit exact.
inline void write_embeddings_csv(std::ostream& out,
                                 std::span<const EmbeddingVector> rows) {
  char buf[64];
  for (const auto& v : rows) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ',';
      const auto res = std::to_chars(buf, buf + sizeof(buf), v[i]);
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

// Row i of the file is the embedding of dataset record i.
inline std::vector<EmbeddingVector> load_precomputed(
    const std::string& path, const FeaturizerConfig& cfg,
    std::size_t expected_rows) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file '" + path + "'");
  auto rows = read_embeddings_csv(in, cfg.dimension);
  if (rows.size() != expected_rows) {
    throw ValidationError("embedding row count mismatch: expected " +
                          std::to_string(expected_rows) + ", found " +
                          std::to_string(rows.size()));
  }
  return rows;
}

// Features for every example of `d`, as an N x D matrix in example order.
inline Matrix featurize(const Dataset& d, const FeaturizerConfig& cfg,
                        std::span<const EmbeddingVector> precomputed = {}) {
  validate(cfg);
  Matrix out(d.size(), cfg.dimension);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& ex = d.examples[i];
    EmbeddingVector v;
    if (cfg.kind == FeaturizerKind::kHashedBow) {
      v = embed_hashed_bow(ex.text, cfg);
    } else {
      if (ex.source_index >= precomputed.size()) {
        throw ValidationError("no precomputed embedding for record " +
                              std::to_string(ex.source_index));
      }
      v = precomputed[ex.source_index];
    }
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace cape

#endif  // CAPE_FEATURIZER_HPP_
