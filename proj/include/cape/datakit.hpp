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


#ifndef CAPE_DATAKIT_HPP_
#define CAPE_DATAKIT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cape/error.hpp"
#include "cape/rng.hpp"
#include "json.hpp"

namespace cape {

inline constexpr std::string_view kGender = "gender";
inline constexpr std::string_view kLocation = "location";
inline constexpr std::string_view kAge = "age";
inline constexpr int kRatingClasses = 5;

// One line of the JSONL dataset, validated.
struct RawRecord {
  std::string text;
  int rating = 1;
  std::string gender;
  int birth_year = 0;
  double latitude = 0.0;
  double longitude = 0.0;

  bool operator==(const RawRecord&) const = default;
};

struct Example {
  std::string text;
  int target = 0;
  std::map<std::string, int, std::less<>> private_labels;
  // Position of the originating record; keys precomputed embedding rows.
  std::size_t source_index = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::map<std::string, int, std::less<>> attribute_schema;
  int label_count = kRatingClasses;
  std::vector<std::string> warnings;
  // Class index -> original value, for reporting.
  std::vector<std::string> gender_values;
  std::vector<std::string> location_codes;
  std::vector<int> age_edges;

  std::size_t size() const { return examples.size(); }
  int classes(std::string_view attribute) const {
    auto it = attribute_schema.find(attribute);
    if (it == attribute_schema.end()) {
      throw ValidationError("attribute '" + std::string(attribute) +
                            "' is not in the dataset schema");
    }
    return it->second;
  }

  bool operator==(const Dataset&) const = default;
};

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string where(std::size_t line_no) {
  return line_no == 0 ? std::string()
                      : " (line " + std::to_string(line_no) + ")";
}

inline const nlohmann::json& require_field(const nlohmann::json& obj,
                                           const char* key,
                                           std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw ValidationError(std::string("missing field '") + key + "'" +
                          where(line_no));
  }
  return *it;
}

inline int require_int(const nlohmann::json& obj, const char* key,
                       std::size_t line_no) {
  const auto& v = require_field(obj, key, line_no);
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::trunc(d) == d && std::abs(d) < 1e9) return static_cast<int>(d);
  }
  throw ValidationError(std::string("field '") + key +
                        "' must be an integer" + where(line_no));
}

inline double require_number(const nlohmann::json& obj, const char* key,
                             std::size_t line_no) {
  const auto& v = require_field(obj, key, line_no);
  if (!v.is_number()) {
    throw ValidationError(std::string("field '") + key +
                          "' must be a number" + where(line_no));
  }
  return v.get<double>();
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  std::size_t line_no) {
  const auto& v = require_field(obj, key, line_no);
  if (!v.is_string()) {
    throw ValidationError(std::string("field '") + key +
                          "' must be a string" + where(line_no));
  }
  return v.get<std::string>();
}

inline void check_coordinates(double lat, double lon, std::size_t line_no) {
  if (!(lat >= -90.0 && lat <= 90.0)) {
    throw ValidationError("field 'latitude' out of range [-90, 90]" +
                          where(line_no));
  }
  if (!(lon >= -180.0 && lon <= 180.0)) {
    throw ValidationError("field 'longitude' out of range [-180, 180]" +
                          where(line_no));
  }
}

}  // namespace detail

// Parses one JSONL line. line_no is only used in error messages (0 = unknown).
inline RawRecord parse_record(std::string_view line, std::size_t line_no = 0) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed JSON" + detail::where(line_no) + ": " +
                     e.what());
  }
  if (!obj.is_object()) {
    throw ParseError("expected a JSON object" + detail::where(line_no));
  }
  RawRecord r;
  r.text = detail::require_string(obj, "text", line_no);
  r.rating = detail::require_int(obj, "rating", line_no);
  if (r.rating < 1 || r.rating > kRatingClasses) {
    throw ValidationError("field 'rating' must be in 1..5, got " +
                          std::to_string(r.rating) + detail::where(line_no));
  }
  r.gender = detail::require_string(obj, "gender", line_no);
  r.birth_year = detail::require_int(obj, "birth_year", line_no);
  r.latitude = detail::require_number(obj, "latitude", line_no);
  r.longitude = detail::require_number(obj, "longitude", line_no);
  detail::check_coordinates(r.latitude, r.longitude, line_no);
  return r;
}

// Serializes with keys in schema order; output parses back to the same record.
inline std::string format_record(const RawRecord& r) {
  nlohmann::ordered_json obj;
  obj["text"] = r.text;
  obj["rating"] = r.rating;
  obj["gender"] = r.gender;
  obj["birth_year"] = r.birth_year;
  obj["latitude"] = r.latitude;
  obj["longitude"] = r.longitude;
  return obj.dump();
}

// Blank lines are skipped; line numbers in errors are 1-based.
inline std::vector<RawRecord> read_jsonl(std::istream& in) {
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    records.push_back(parse_record(line, line_no));
  }
  return records;
}

inline std::vector<RawRecord> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file '" + path + "'");
  return read_jsonl(in);
}

inline std::string to_jsonl(std::span<const RawRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += format_record(r);
    out += '\n';
  }
  return out;
}

// Standard base-32 geohash. Each bit halves the current interval; a
// coordinate equal to the midpoint takes the upper half, so the cell is
// half-open [lo, hi) except at the +90/+180 edges.
inline std::string geohash_encode(double lat, double lon, int precision) {
  static constexpr std::string_view kAlphabet =
      "0123456789bcdefghjkmnpqrstuvwxyz";
  if (precision < 1) throw ValidationError("geohash precision must be >= 1");
  detail::check_coordinates(lat, lon, 0);
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  std::string hash;
  hash.reserve(static_cast<std::size_t>(precision));
  bool even_bit = true;  // even bits refine longitude
  int bits = 0;
  int ch = 0;
  while (hash.size() < static_cast<std::size_t>(precision)) {
    double& lo = even_bit ? lon_lo : lat_lo;
    double& hi = even_bit ? lon_hi : lat_hi;
    const double value = even_bit ? lon : lat;
    const double mid = (lo + hi) / 2.0;
    ch <<= 1;
    if (value >= mid) {
      ch |= 1;
      lo = mid;
    } else {
      hi = mid;
    }
    even_bit = !even_bit;
    if (++bits == 5) {
      hash += kAlphabet[static_cast<std::size_t>(ch)];
      bits = 0;
      ch = 0;
    }
  }
  return hash;
}

struct AgeBins {
  // k - 1 strictly ascending thresholds; a year equal to an edge belongs to
  // the lower (older) bin.
  std::vector<int> edges;
  std::vector<int> classes;
};

inline int assign_age_bin(std::span<const int> edges, int year) {
  return static_cast<int>(
      std::lower_bound(edges.begin(), edges.end(), year) - edges.begin());
}

// Equal-frequency binning. Edge i is the distinct year whose cumulative count
// is closest to round(i * N / k), constrained so that every bin keeps at least
// one distinct year. Class 0 holds the oldest cohort.
inline AgeBins bin_birth_years(std::span<const int> years, int k) {
  if (years.empty()) throw ValidationError("bin_birth_years: no years given");
  if (k < 2) throw ValidationError("bin_birth_years: need at least 2 bins");

  std::map<int, std::size_t> counts;
  for (int y : years) ++counts[y];
  const std::size_t distinct = counts.size();
  if (static_cast<std::size_t>(k) > distinct) {
    throw ValidationError("bin_birth_years: " + std::to_string(k) +
                          " bins requested but only " +
                          std::to_string(distinct) + " distinct years");
  }

  std::vector<int> values;
  std::vector<std::size_t> cumulative;
  std::size_t running = 0;
  for (const auto& [year, count] : counts) {
    running += count;
    values.push_back(year);
    cumulative.push_back(running);
  }

  const std::size_t n = years.size();
  const auto bins = static_cast<std::size_t>(k);
  AgeBins out;
  std::size_t first = 0;
  for (std::size_t i = 1; i < bins; ++i) {
    const std::size_t target = (2 * i * n + bins) / (2 * bins);
    const std::size_t last = distinct - 1 - (bins - i);
    std::size_t best = first;
    std::size_t best_gap = SIZE_MAX;
    for (std::size_t j = first; j <= last; ++j) {
      const std::size_t gap = cumulative[j] > target ? cumulative[j] - target
                                                     : target - cumulative[j];
      if (gap < best_gap) {
        best_gap = gap;
        best = j;
      }
      if (cumulative[j] >= target) break;
    }
    out.edges.push_back(values[best]);
    first = best + 1;
  }

  out.classes.reserve(n);
  for (int y : years) out.classes.push_back(assign_age_bin(out.edges, y));
  return out;
}

struct PreprocessOptions {
  int location_precision = 2;
  int age_bins = 6;
  // 0 disables the cap.
  int max_location_classes = 0;
};

inline Dataset preprocess(std::span<const RawRecord> records,
                          const PreprocessOptions& opts = {}) {
  if (records.empty()) throw ValidationError("preprocess: no records");

  Dataset d;
  std::set<std::string> genders;
  for (const auto& r : records) genders.insert(r.gender);
  if (genders.size() > 2) {
    throw ValidationError("preprocess: gender must be binary, found " +
                          std::to_string(genders.size()) + " values");
  }
  d.gender_values.assign(genders.begin(), genders.end());
  if (genders.size() < 2) {
    d.warnings.push_back("fewer than 2 distinct gender values");
  }

  std::map<std::string, int> location_index;
  std::vector<int> location_class;
  location_class.reserve(records.size());
  for (const auto& r : records) {
    auto code = geohash_encode(r.latitude, r.longitude,
                               opts.location_precision);
    auto [it, inserted] =
        location_index.try_emplace(code, static_cast<int>(location_index.size()));
    if (inserted) d.location_codes.push_back(code);
    location_class.push_back(it->second);
  }
  if (opts.max_location_classes > 0 &&
      static_cast<int>(location_index.size()) > opts.max_location_classes) {
    throw ValidationError("preprocess: " +
                          std::to_string(location_index.size()) +
                          " location classes exceed the configured maximum of " +
                          std::to_string(opts.max_location_classes));
  }
  if (location_index.size() < 2) {
    d.warnings.push_back("fewer than 2 distinct geohashes");
  }

  std::vector<int> years;
  years.reserve(records.size());
  for (const auto& r : records) years.push_back(r.birth_year);
  AgeBins ages = bin_birth_years(years, opts.age_bins);
  d.age_edges = ages.edges;

  d.attribute_schema.emplace(kGender, 2);
  d.attribute_schema.emplace(kLocation,
                             static_cast<int>(location_index.size()));
  d.attribute_schema.emplace(kAge, opts.age_bins);
  d.label_count = kRatingClasses;

  d.examples.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    Example e;
    e.text = r.text;
    e.target = r.rating - 1;
    e.private_labels.emplace(
        kGender, static_cast<int>(std::lower_bound(d.gender_values.begin(),
                                                   d.gender_values.end(),
                                                   r.gender) -
                                  d.gender_values.begin()));
    e.private_labels.emplace(kLocation, location_class[i]);
    e.private_labels.emplace(kAge, ages.classes[i]);
    e.source_index = i;
    d.examples.push_back(std::move(e));
  }
  return d;
}

// Returns (train, test). Both keep the parent's schema and metadata.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d,
                                                 const SplitSpec& spec) {
  if (d.size() < 2) throw ValidationError("split_dataset: need >= 2 examples");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ValidationError("split_dataset: train_fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  NoiseRng rng(derive_seed(spec.seed, stream::kSplit));
  shuffle(std::span<std::size_t>(order), rng);

  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(d.size())));

  auto shell = [&d] {
    Dataset part;
    part.attribute_schema = d.attribute_schema;
    part.label_count = d.label_count;
    part.warnings = d.warnings;
    part.gender_values = d.gender_values;
    part.location_codes = d.location_codes;
    part.age_edges = d.age_edges;
    return part;
  };
  std::pair<Dataset, Dataset> out{shell(), shell()};
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& part = i < n_train ? out.first : out.second;
    part.examples.push_back(d.examples[order[i]]);
  }
  return out;
}

// Synthetic reviews in the JSONL schema.
//
// Every text carries two sentiment tokens drawn from its rating's vocabulary.
// For each private attribute, with probability leak_strength the text also
// carries a marker token for the author's value; otherwise a neutral token
// takes its place. Ratings and attributes are drawn independently.
namespace synthetic {

struct Region {
  const char* name;
  double latitude;
  double longitude;
};

// Each anchor sits in a different precision-2 geohash cell and stays there
// under the +/-0.25 degree jitter applied below.
inline constexpr std::array<Region, 4> kRegions{{
    {"penzance", 50.12, -5.54},    // gb
    {"birmingham", 52.49, -1.89},  // gc
    {"inverness", 57.48, -4.22},   // gf
    {"norwich", 52.63, 1.30},      // u1
}};

inline constexpr std::array<std::array<const char*, 3>, 5> kSentiment{{
    {"awful", "dreadful", "useless"},
    {"poor", "disappointing", "slow"},
    {"okay", "average", "fine"},
    {"good", "helpful", "pleasant"},
    {"excellent", "superb", "brilliant"},
}};

inline constexpr std::array<const char*, 2> kGenders{"F", "M"};
inline constexpr int kFirstBirthYear = 1940;
inline constexpr int kBirthYearSpan = 60;
inline constexpr int kNeutralWords = 4;
inline constexpr int kMarkerWords = 1;
inline constexpr int kSentimentWords = 2;
inline constexpr int kFillerTokens = 2;

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace synthetic

inline std::vector<RawRecord> generate_synthetic_records(std::size_t n,
                                                         double leak_strength,
                                                         std::uint64_t seed) {
  using namespace synthetic;
  if (!(leak_strength >= 0.0 && leak_strength <= 1.0)) {
    throw ValidationError("leak_strength must be in [0, 1]");
  }
  NoiseRng rng(derive_seed(seed, stream::kSynthetic));
  auto pick = [&rng](std::size_t count) {
    return static_cast<std::size_t>(rng.uniform_index(count));
  };
  auto neutral = [&] { return "w" + std::to_string(pick(kNeutralWords)); };
  auto marker_or_neutral = [&](const std::string& stem) {
    if (rng.uniform01() < leak_strength) {
      return stem + "_" + std::string(1, static_cast<char>('a' + pick(kMarkerWords)));
    }
    return neutral();
  };

  std::vector<RawRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawRecord r;
    r.rating = static_cast<int>(pick(kRatingClasses)) + 1;
    r.gender = kGenders[pick(kGenders.size())];
    const Region& region = kRegions[pick(kRegions.size())];
    r.latitude = round4(region.latitude + (rng.uniform01() - 0.5) * 0.5);
    r.longitude = round4(region.longitude + (rng.uniform01() - 0.5) * 0.5);
    r.birth_year = kFirstBirthYear + static_cast<int>(pick(kBirthYearSpan));
    const int decade = (r.birth_year / 10) * 10;

    std::vector<std::string> tokens;
    const auto& pool = kSentiment[static_cast<std::size_t>(r.rating - 1)];
    tokens.emplace_back(pool[pick(kSentimentWords)]);
    tokens.emplace_back(pool[pick(kSentimentWords)]);
    std::string gender_stem = "gender_";
    gender_stem += static_cast<char>(r.gender[0] | 0x20);
    tokens.push_back(marker_or_neutral(gender_stem));
    tokens.push_back(marker_or_neutral(std::string("loc_") + region.name));
    tokens.push_back(marker_or_neutral("born_" + std::to_string(decade) + "s"));
    for (int f = 0; f < kFillerTokens; ++f) tokens.push_back(neutral());
    shuffle(std::span<std::string>(tokens), rng);

    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (t) r.text += ' ';
      r.text += tokens[t];
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline Dataset generate_synthetic(std::size_t n, double leak_strength,
                                  std::uint64_t seed,
                                  const PreprocessOptions& opts = {}) {
  if (n < 1) throw ValidationError("generate_synthetic: n must be >= 1");
  const auto records = generate_synthetic_records(n, leak_strength, seed);
  return preprocess(records, opts);
}

}  // namespace cape

#endif  // CAPE_DATAKIT_HPP_
