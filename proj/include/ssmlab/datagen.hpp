#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ssmlab/errors.hpp"
#include "ssmlab/featurespace.hpp"
#include "ssmlab/rng.hpp"

namespace ssmlab {

// One labeled sequence. Columns of `tokens` are the (noisy) token vectors;
// `roles[l]` is the basis index the token at position l was drawn from.
struct Sample {
  Eigen::MatrixXd tokens;  // d x L
  int label = 0;           // +1 or -1
  std::vector<int> roles;  // length L
};

enum class Placement { contiguous, shuffled };

struct MajorityVotingConfig {
  int d = 32;
  int L = 30;
  double alpha_r = 0.30;
  double alpha_c = 0.10;
  double tau = 0.01;
  Placement placement = Placement::shuffled;

  int relevant_count() const { return static_cast<int>(std::lround(alpha_r * L)); }
  int confusion_count() const { return static_cast<int>(std::lround(alpha_c * L)); }

  void validate() const {
    if (d < 3) throw ConfigError("dimension_at_least_three");
    if (L < 1) throw ConfigError("sequence_length_positive");
    if (!(alpha_r > 0.0 && alpha_r < 1.0)) throw ConfigError("alpha_r_in_unit_interval");
    if (!(alpha_c > 0.0 && alpha_c < 1.0)) throw ConfigError("alpha_c_in_unit_interval");
    if (tau < 0.0) throw ConfigError("tau_nonnegative");
    if (confusion_count() < 1) throw ConfigError("confusion_tokens_at_least_one");
    if (relevant_count() <= confusion_count())
      throw ConfigError("relevant_tokens_exceed_confusion_tokens");
    if (relevant_count() + confusion_count() > L) throw ConfigError("token_budget_exceeded");
  }
};

struct LocalityConfig {
  int d = 32;
  int L = 30;
  double tau = 0.01;
  int delta_near = 2;
  int delta_far = 10;

  void validate() const {
    if (d < 3) throw ConfigError("dimension_at_least_three");
    if (L < 1) throw ConfigError("sequence_length_positive");
    if (tau < 0.0) throw ConfigError("tau_nonnegative");
    if (delta_near < 1) throw ConfigError("delta_near_at_least_one");
    if (delta_near >= delta_far) throw ConfigError("delta_near_lt_delta_far");
    if (delta_far + 1 > L) throw ConfigError("delta_far_fits_sequence");
  }
};

using RegimeConfig = std::variant<MajorityVotingConfig, LocalityConfig>;

inline std::string regime_name(const RegimeConfig& cfg) {
  return std::holds_alternative<MajorityVotingConfig>(cfg) ? "majority" : "locality";
}

struct Dataset {
  std::vector<Sample> samples;
  std::string regime;
  nlohmann::json config;  // generation config snapshot
  std::uint64_t seed = 0;
};

namespace detail {

// Draw one irrelevant feature index, uniform over 2..d-1.
inline int draw_irrelevant(int d, Rng& rng) { return rng.uniform_int(2, d - 1); }

// Filler stream for locality sequences: round-robin over reshuffled pools of
// the irrelevant indices, so a filler feature never recurs within d-2
// positions. Independent per-position draws would let chance filler pairs at
// small separations mimic the class signal, which swamps the locality margin
// at desk-scale sample sizes.
class FillerPool {
 public:
  FillerPool(int d, Rng& rng) : rng_(rng), next_(d - 2) {
    pool_.reserve(d - 2);
    for (int k = 2; k < d; ++k) pool_.push_back(k);
  }

  int draw() {
    if (next_ == static_cast<int>(pool_.size())) {
      for (int i = static_cast<int>(pool_.size()) - 1; i > 0; --i)
        std::swap(pool_[i], pool_[rng_.uniform_int(0, i)]);
      next_ = 0;
    }
    return pool_[next_++];
  }

 private:
  Rng& rng_;
  std::vector<int> pool_;
  int next_;
};

inline Sample realize_tokens(const FeatureBasis& basis, std::vector<int> roles,
                             int label, double tau, Rng& rng) {
  const int L = static_cast<int>(roles.size());
  Sample s;
  s.label = label;
  s.roles = std::move(roles);
  s.tokens.resize(basis.dim, L);
  for (int l = 0; l < L; ++l) s.tokens.col(l) = noisy_token(basis, s.roles[l], tau, rng);
  return s;
}

}  // namespace detail

// Majority-voting sample: round(alpha_r*L) class-relevant tokens,
// round(alpha_c*L) confusion tokens, the rest irrelevant fillers. Contiguous
// placement puts relevant tokens first, then confusion tokens; shuffled
// placement permutes positions uniformly.
inline Sample gen_majority_sample(const MajorityVotingConfig& cfg, int label,
                                  const FeatureBasis& basis, Rng& rng) {
  cfg.validate();
  if (label != 1 && label != -1) throw std::invalid_argument("label must be +1 or -1");
  if (basis.dim != cfg.d) throw std::invalid_argument("basis dimension mismatch");

  const int relevant = label > 0 ? 0 : 1;
  const int confusion = 1 - relevant;
  std::vector<int> roles;
  roles.reserve(cfg.L);
  for (int k = 0; k < cfg.relevant_count(); ++k) roles.push_back(relevant);
  for (int k = 0; k < cfg.confusion_count(); ++k) roles.push_back(confusion);
  while (static_cast<int>(roles.size()) < cfg.L)
    roles.push_back(detail::draw_irrelevant(cfg.d, rng));

  if (cfg.placement == Placement::shuffled) {
    for (int i = cfg.L - 1; i > 0; --i) std::swap(roles[i], roles[rng.uniform_int(0, i)]);
  }
  return detail::realize_tokens(basis, std::move(roles), label, cfg.tau, rng);
}

// Locality-structured sample: two class-relevant tokens delta_near apart and
// two confusion tokens delta_far apart, positions drawn uniformly over all
// collision-free placements; everything else is an irrelevant filler drawn
// from the cycling pool (uniform marginal, no close repeats).
inline Sample gen_locality_sample(const LocalityConfig& cfg, int label,
                                  const FeatureBasis& basis, Rng& rng) {
  cfg.validate();
  if (label != 1 && label != -1) throw std::invalid_argument("label must be +1 or -1");
  if (basis.dim != cfg.d) throw std::invalid_argument("basis dimension mismatch");

  const int near_feature = label > 0 ? 0 : 1;
  const int far_feature = 1 - near_feature;

  std::vector<std::pair<int, int>> feasible;
  for (int p = 0; p + cfg.delta_near < cfg.L; ++p) {
    for (int q = 0; q + cfg.delta_far < cfg.L; ++q) {
      const int p2 = p + cfg.delta_near, q2 = q + cfg.delta_far;
      if (p == q || p == q2 || p2 == q || p2 == q2) continue;
      feasible.emplace_back(p, q);
    }
  }
  if (feasible.empty()) throw ConfigError("no_collision_free_placement");

  const auto [p, q] = feasible[rng.uniform_int(0, static_cast<int>(feasible.size()) - 1)];
  std::vector<int> roles(cfg.L, -1);
  roles[p] = roles[p + cfg.delta_near] = near_feature;
  roles[q] = roles[q + cfg.delta_far] = far_feature;
  detail::FillerPool fillers(cfg.d, rng);
  for (int l = 0; l < cfg.L; ++l)
    if (roles[l] < 0) roles[l] = fillers.draw();

  return detail::realize_tokens(basis, std::move(roles), label, cfg.tau, rng);
}

inline Sample gen_sample(const RegimeConfig& cfg, int label, const FeatureBasis& basis,
                         Rng& rng) {
  if (const auto* mv = std::get_if<MajorityVotingConfig>(&cfg))
    return gen_majority_sample(*mv, label, basis, rng);
  return gen_locality_sample(std::get<LocalityConfig>(cfg), label, basis, rng);
}

inline nlohmann::json regime_config_to_json(const RegimeConfig& cfg);

// Exactly ceil(N/2) positive samples followed by floor(N/2) negative ones,
// each drawn from its own split of the stream (sample n uses rng.split(n)).
inline Dataset gen_balanced_dataset(const RegimeConfig& cfg, int N,
                                    const FeatureBasis& basis, const Rng& rng) {
  if (N < 2) throw ConfigError("dataset_min_size");
  const int positives = (N + 1) / 2;
  Dataset ds;
  ds.regime = regime_name(cfg);
  ds.config = regime_config_to_json(cfg);
  ds.seed = rng.seed();
  ds.samples.reserve(N);
  for (int n = 0; n < N; ++n) {
    Rng local = rng.split(static_cast<std::uint64_t>(n));
    ds.samples.push_back(gen_sample(cfg, n < positives ? +1 : -1, basis, local));
  }
  return ds;
}

// --- JSON serialization -----------------------------------------------------

inline nlohmann::json regime_config_to_json(const MajorityVotingConfig& cfg) {
  return {{"d", cfg.d},
          {"L", cfg.L},
          {"alpha_r", cfg.alpha_r},
          {"alpha_c", cfg.alpha_c},
          {"tau", cfg.tau},
          {"placement", cfg.placement == Placement::contiguous ? "contiguous" : "shuffled"}};
}

inline nlohmann::json regime_config_to_json(const LocalityConfig& cfg) {
  return {{"d", cfg.d},
          {"L", cfg.L},
          {"tau", cfg.tau},
          {"delta_near", cfg.delta_near},
          {"delta_far", cfg.delta_far}};
}

inline nlohmann::json regime_config_to_json(const RegimeConfig& cfg) {
  return std::visit([](const auto& c) { return regime_config_to_json(c); }, cfg);
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json samples = nlohmann::json::array();
  for (const Sample& s : ds.samples) {
    const int d = static_cast<int>(s.tokens.rows());
    const int L = static_cast<int>(s.tokens.cols());
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(d) * L);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < L; ++c) flat.push_back(s.tokens(r, c));
    samples.push_back({{"label", s.label}, {"roles", s.roles}, {"tokens", flat}});
  }
  return {{"schema_version", 1},
          {"regime", ds.regime},
          {"seed", ds.seed},
          {"config", ds.config},
          {"samples", std::move(samples)}};
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != 1)
    throw ConfigError("dataset_schema_version");
  Dataset ds;
  ds.regime = j.at("regime").get<std::string>();
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.config = j.at("config");
  const int d = ds.config.at("d").get<int>();
  const int L = ds.config.at("L").get<int>();
  for (const auto& js : j.at("samples")) {
    Sample s;
    s.label = js.at("label").get<int>();
    if (s.label != 1 && s.label != -1) throw ConfigError("sample_label_pm_one");
    s.roles = js.at("roles").get<std::vector<int>>();
    if (static_cast<int>(s.roles.size()) != L) throw ConfigError("sample_roles_length");
    for (int r : s.roles)
      if (r < 0 || r >= d) throw ConfigError("sample_role_index_range");
    const auto flat = js.at("tokens").get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != d * L) throw ConfigError("sample_token_shape");
    s.tokens.resize(d, L);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < L; ++c) {
        const double v = flat[static_cast<std::size_t>(r) * L + c];
        if (!std::isfinite(v)) throw ConfigError("sample_token_finite");
        s.tokens(r, c) = v;
      }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << dataset_to_json(ds).dump(2) << '\n';
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  nlohmann::json j;
  in >> j;
  return dataset_from_json(j);
}

}  // namespace ssmlab
