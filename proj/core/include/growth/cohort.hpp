#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace growth {

enum class Sex { female, male };

char sex_code(Sex s);  // 'F' / 'M'
Sex parse_sex(char code);

// One visit. Ages are months throughout the library; years appear only at
// presentation boundaries (plots, dashboard).
struct Observation {
  double age = 0.0;                    // months, >= 0
  std::optional<double> weight;        // kg
  std::optional<double> height;        // cm
  double bmi = 0.0;                    // kg/m^2

  friend bool operator==(const Observation&, const Observation&) = default;
};

inline constexpr double kBmiLower = 5.0;
inline constexpr double kBmiUpper = 60.0;
inline constexpr double kBmiConsistencyTol = 1e-9;

double bmi_from(double weight_kg, double height_cm);

// Irregular longitudinal record for one child, ages strictly increasing.
class GrowthSeries {
 public:
  GrowthSeries() = default;
  // Sorts by age; throws std::invalid_argument on duplicate ages.
  GrowthSeries(std::string id, Sex sex, std::vector<Observation> observations);

  const std::string& id() const { return id_; }
  Sex sex() const { return sex_; }
  const std::vector<Observation>& observations() const { return obs_; }
  std::size_t size() const { return obs_.size(); }
  bool empty() const { return obs_.empty(); }

  std::vector<double> ages() const;
  std::vector<double> bmis() const;

  friend bool operator==(const GrowthSeries&, const GrowthSeries&) = default;

 private:
  std::string id_;
  Sex sex_ = Sex::female;
  std::vector<Observation> obs_;
};

struct FileProvenance {
  std::string path;
  friend bool operator==(const FileProvenance&, const FileProvenance&) = default;
};
struct SyntheticProvenance {
  std::uint64_t seed = 0;
  std::uint64_t spec_hash = 0;
  friend bool operator==(const SyntheticProvenance&, const SyntheticProvenance&) = default;
};
using Provenance = std::variant<FileProvenance, SyntheticProvenance>;

class Cohort {
 public:
  Cohort() = default;
  // Throws EmptyCohort when `individuals` is empty and std::invalid_argument
  // on duplicate ids.
  Cohort(std::vector<GrowthSeries> individuals, Provenance provenance);

  const std::vector<GrowthSeries>& individuals() const { return individuals_; }
  const Provenance& provenance() const { return provenance_; }
  std::size_t size() const { return individuals_.size(); }
  const GrowthSeries& operator[](std::size_t i) const { return individuals_[i]; }
  const GrowthSeries* find(const std::string& id) const;

  // Subset preserving relative order; throws EmptyCohort if no one matches.
  Cohort filter_sex(Sex sex) const;

  friend bool operator==(const Cohort&, const Cohort&) = default;

 private:
  std::vector<GrowthSeries> individuals_;
  Provenance provenance_;
};

struct RowDiagnostic {
  std::size_t row = 0;  // 1-based data row (header is row 0)
  std::string column;
  std::string reason;
};

struct LoadOptions {
  // Strict mode throws SchemaError on the first bad row; lenient mode skips
  // rejected rows and reports them in `diagnostics`.
  bool strict = true;
};

struct LoadResult {
  Cohort cohort;
  std::vector<RowDiagnostic> diagnostics;
};

// CSV header: id,sex,age_months,weight_kg,height_cm,bmi
LoadResult load_cohort(const std::filesystem::path& path, LoadOptions options = {});
LoadResult parse_cohort_csv(const std::string& text, LoadOptions options = {},
                            Provenance provenance = FileProvenance{});
std::string format_cohort_csv(const Cohort& cohort);
void write_cohort(const Cohort& cohort, const std::filesystem::path& path);

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, std::size_t n_train,
                                       std::uint64_t seed);

struct SeriesSplit {
  GrowthSeries kept;
  GrowthSeries held_out;
};

// Removes round-half-up(ratio * size) points at random, keeping at least one.
SeriesSplit mask_random(const GrowthSeries& series, double ratio, std::uint64_t seed);
// kept: age <= cutoff; held_out: age > cutoff.
SeriesSplit truncate_after(const GrowthSeries& series, double cutoff_age);

}  // namespace growth
