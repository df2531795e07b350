#include "growth/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "growth/error.hpp"

namespace growth {

char sex_code(Sex s) { return s == Sex::female ? 'F' : 'M'; }

Sex parse_sex(char code) {
  switch (code) {
    case 'F': return Sex::female;
    case 'M': return Sex::male;
    default: throw std::invalid_argument(std::string("invalid sex code: ") + code);
  }
}

double bmi_from(double weight_kg, double height_cm) {
  const double h = height_cm / 100.0;
  return weight_kg / (h * h);
}

GrowthSeries::GrowthSeries(std::string id, Sex sex, std::vector<Observation> observations)
    : id_(std::move(id)), sex_(sex), obs_(std::move(observations)) {
  std::stable_sort(obs_.begin(), obs_.end(),
                   [](const Observation& a, const Observation& b) { return a.age < b.age; });
  for (std::size_t i = 1; i < obs_.size(); ++i) {
    if (!(obs_[i].age > obs_[i - 1].age)) {
      throw std::invalid_argument("duplicate age " + std::to_string(obs_[i].age) +
                                  " for individual " + id_);
    }
  }
}

std::vector<double> GrowthSeries::ages() const {
  std::vector<double> out;
  out.reserve(obs_.size());
  for (const auto& o : obs_) out.push_back(o.age);
  return out;
}

std::vector<double> GrowthSeries::bmis() const {
  std::vector<double> out;
  out.reserve(obs_.size());
  for (const auto& o : obs_) out.push_back(o.bmi);
  return out;
}

Cohort::Cohort(std::vector<GrowthSeries> individuals, Provenance provenance)
    : individuals_(std::move(individuals)), provenance_(std::move(provenance)) {
  if (individuals_.empty()) throw EmptyCohort();
  std::unordered_set<std::string> seen;
  for (const auto& s : individuals_) {
    if (!seen.insert(s.id()).second) {
      throw std::invalid_argument("duplicate individual id: " + s.id());
    }
  }
}

const GrowthSeries* Cohort::find(const std::string& id) const {
  for (const auto& s : individuals_) {
    if (s.id() == id) return &s;
  }
  return nullptr;
}

Cohort Cohort::filter_sex(Sex sex) const {
  std::vector<GrowthSeries> out;
  for (const auto& s : individuals_) {
    if (s.sex() == sex) out.push_back(s);
  }
  return Cohort(std::move(out), provenance_);
}

namespace {

constexpr const char* kHeader = "id,sex,age_months,weight_kg,height_cm,bmi";
constexpr std::size_t kColumns = 6;
const char* const kColumnNames[kColumns] = {"id",        "sex",       "age_months",
                                            "weight_kg", "height_cm", "bmi"};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct PendingRow {
  std::size_t row;
  std::string id;
  Sex sex;
  Observation obs;
};

// Validates one data row; throws SchemaError describing the first problem.
PendingRow parse_row(std::size_t row, const std::string& line) {
  auto fields = split_fields(line);
  if (fields.size() != kColumns) {
    throw SchemaError(row, "*", "expected 6 fields, found " + std::to_string(fields.size()));
  }
  for (auto& f : fields) f = trim(f);

  PendingRow out{row, fields[0], Sex::female, {}};
  if (out.id.empty()) throw SchemaError(row, kColumnNames[0], "empty id");
  if (fields[1] == "F") {
    out.sex = Sex::female;
  } else if (fields[1] == "M") {
    out.sex = Sex::male;
  } else {
    throw SchemaError(row, kColumnNames[1], "sex must be F or M");
  }

  const auto age = parse_number(fields[2]);
  if (!age) throw SchemaError(row, kColumnNames[2], "unparseable age");
  if (*age < 0.0) throw SchemaError(row, kColumnNames[2], "negative age");
  out.obs.age = *age;

  auto optional_positive = [&](std::size_t col) -> std::optional<double> {
    if (fields[col].empty()) return std::nullopt;
    const auto v = parse_number(fields[col]);
    if (!v) throw SchemaError(row, kColumnNames[col], "unparseable value");
    if (*v <= 0.0) throw SchemaError(row, kColumnNames[col], "must be positive");
    return v;
  };
  out.obs.weight = optional_positive(3);
  out.obs.height = optional_positive(4);

  const bool both = out.obs.weight && out.obs.height;
  if (fields[5].empty()) {
    if (!both) throw SchemaError(row, kColumnNames[5], "bmi missing and not derivable");
    out.obs.bmi = bmi_from(*out.obs.weight, *out.obs.height);
  } else {
    const auto bmi = parse_number(fields[5]);
    if (!bmi) throw SchemaError(row, kColumnNames[5], "unparseable bmi");
    if (*bmi <= 0.0) throw SchemaError(row, kColumnNames[5], "non-positive bmi");
    if (both && std::abs(*bmi - bmi_from(*out.obs.weight, *out.obs.height)) > kBmiConsistencyTol) {
      throw SchemaError(row, kColumnNames[5], "bmi inconsistent with weight/height");
    }
    out.obs.bmi = *bmi;
  }
  if (!(out.obs.bmi > kBmiLower && out.obs.bmi < kBmiUpper)) {
    throw SchemaError(row, kColumnNames[5], "bmi outside (5, 60)");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

LoadResult parse_cohort_csv(const std::string& text, LoadOptions options,
                            Provenance provenance) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(0, "*", "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (trim(line) != kHeader) {
    throw SchemaError(0, "*", std::string("header must be '") + kHeader + "'");
  }

  LoadResult result;
  // Insertion order of ids is preserved in the output cohort.
  std::vector<std::string> order;
  std::map<std::string, std::pair<Sex, std::vector<Observation>>> by_id;
  std::map<std::string, std::set<double>> ages_seen;

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty() || trim(line) == "\r") continue;
    try {
      auto parsed = parse_row(row, line);
      auto it = by_id.find(parsed.id);
      if (it == by_id.end()) {
        order.push_back(parsed.id);
        it = by_id.emplace(parsed.id, std::make_pair(parsed.sex, std::vector<Observation>{}))
                 .first;
      } else if (it->second.first != parsed.sex) {
        throw SchemaError(row, kColumnNames[1], "sex differs from earlier rows of " + parsed.id);
      }
      if (!ages_seen[parsed.id].insert(parsed.obs.age).second) {
        throw SchemaError(row, kColumnNames[2],
                          "duplicate (id, age) pair for " + parsed.id);
      }
      it->second.second.push_back(parsed.obs);
    } catch (const SchemaError& e) {
      if (options.strict) throw;
      result.diagnostics.push_back({e.row(), e.column(), e.reason()});
    }
  }

  std::vector<GrowthSeries> series;
  series.reserve(order.size());
  for (const auto& id : order) {
    auto& [sex, obs] = by_id.at(id);
    if (obs.empty()) continue;
    series.emplace_back(id, sex, std::move(obs));
  }
  if (series.empty()) throw EmptyCohort();
  result.cohort = Cohort(std::move(series), std::move(provenance));
  return result;
}

LoadResult load_cohort(const std::filesystem::path& path, LoadOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound(path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_cohort_csv(buf.str(), options, FileProvenance{path.string()});
}

std::string format_cohort_csv(const Cohort& cohort) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& s : cohort.individuals()) {
    for (const auto& o : s.observations()) {
      out += s.id();
      out += ',';
      out += sex_code(s.sex());
      out += ',';
      out += format_double(o.age);
      out += ',';
      if (o.weight) out += format_double(*o.weight);
      out += ',';
      if (o.height) out += format_double(*o.height);
      out += ',';
      out += format_double(o.bmi);
      out += '\n';
    }
  }
  return out;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << format_cohort_csv(cohort);
}

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, std::size_t n_train,
                                       std::uint64_t seed) {
  const std::size_t n = cohort.size();
  if (n_train == 0 || n_train >= n) {
    throw InvalidSplitSize("n_train must satisfy 0 < n_train < " + std::to_string(n) +
                           ", got " + std::to_string(n_train));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<char> in_train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[perm[i]] = 1;

  std::vector<GrowthSeries> train, test;
  train.reserve(n_train);
  test.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (in_train[i] ? train : test).push_back(cohort[i]);
  }
  return {Cohort(std::move(train), cohort.provenance()),
          Cohort(std::move(test), cohort.provenance())};
}

SeriesSplit mask_random(const GrowthSeries& series, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must be in [0, 1)");
  const std::size_t n = series.size();
  std::size_t n_remove = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  if (n > 0 && n_remove > n - 1) n_remove = n - 1;
  if (n == 0) n_remove = 0;

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<char> removed(n, 0);
  for (std::size_t i = 0; i < n_remove; ++i) removed[perm[i]] = 1;

  std::vector<Observation> kept, held;
  for (std::size_t i = 0; i < n; ++i) {
    (removed[i] ? held : kept).push_back(series.observations()[i]);
  }
  return {GrowthSeries(series.id(), series.sex(), std::move(kept)),
          GrowthSeries(series.id(), series.sex(), std::move(held))};
}

SeriesSplit truncate_after(const GrowthSeries& series, double cutoff_age) {
  if (!(cutoff_age > 0.0)) throw std::invalid_argument("cutoff age must be positive");
  std::vector<Observation> kept, held;
  for (const auto& o : series.observations()) {
    (o.age <= cutoff_age ? kept : held).push_back(o);
  }
  return {GrowthSeries(series.id(), series.sex(), std::move(kept)),
          GrowthSeries(series.id(), series.sex(), std::move(held))};
}

}  // namespace growth
