#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dysm/dynamic_prior.hpp"
#include "dysm/errors.hpp"
#include "dysm/forecast.hpp"
#include "dysm/mortality_model.hpp"
#include "dysm/sampler.hpp"

namespace dysm {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in '" + where + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("'" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace detail

inline std::string to_string(InfantKind k) { return k == InfantKind::dirac ? "dirac" : "half_normal"; }
inline std::string to_string(AdultKind k) { return k == AdultKind::gaussian ? "gaussian" : "absent"; }
inline std::string to_string(OldAgeKind k) { return k == OldAgeKind::skew_normal ? "skew_normal" : "scaled_beta"; }
inline std::string to_string(Blocking b) {
  switch (b) {
    case Blocking::per_tk_across_countries: return "per_tk_across_countries";
    case Blocking::per_jt: return "per_jt";
    default: return "scalar";
  }
}

inline InfantKind parse_infant(const std::string& s) {
  if (s == "dirac") return InfantKind::dirac;
  if (s == "half_normal") return InfantKind::half_normal;
  throw ConfigError("unknown infant component '" + s + "'");
}
inline AdultKind parse_adult(const std::string& s) {
  if (s == "gaussian") return AdultKind::gaussian;
  if (s == "absent" || s == "none") return AdultKind::absent;
  throw ConfigError("unknown adult component '" + s + "'");
}
inline OldAgeKind parse_old_age(const std::string& s) {
  if (s == "skew_normal") return OldAgeKind::skew_normal;
  if (s == "scaled_beta") return OldAgeKind::scaled_beta;
  throw ConfigError("unknown old-age component '" + s + "'");
}
inline Blocking parse_blocking(const std::string& s) {
  if (s == "per_tk_across_countries") return Blocking::per_tk_across_countries;
  if (s == "per_jt" || s == "per_jt_7dim") return Blocking::per_jt;
  if (s == "scalar") return Blocking::scalar;
  throw ConfigError("unknown blocking '" + s + "'");
}

/// "model" section: component choices, innovation law and prior type.
struct ModelConfig {
  ModelVariant variant{};
  InnovationLaw law{};
  bool flat_priors = false;
};

inline json to_json(const ModelConfig& m) {
  return {{"infant", to_string(m.variant.infant)},
          {"adult", to_string(m.variant.adult)},
          {"old_age", to_string(m.variant.old_age)},
          {"innovation", m.law.kind == InnovationLaw::Kind::gaussian ? "gaussian" : "student_t"},
          {"dof", m.law.dof},
          {"flat_priors", m.flat_priors}};
}

inline ModelConfig model_from_json(const json& j) {
  detail::reject_unknown(j, {"infant", "adult", "old_age", "innovation", "dof", "flat_priors"}, "model");
  ModelConfig m;
  std::string s;
  if (j.contains("infant")) m.variant.infant = parse_infant(j.at("infant").get<std::string>());
  if (j.contains("adult")) m.variant.adult = parse_adult(j.at("adult").get<std::string>());
  if (j.contains("old_age")) m.variant.old_age = parse_old_age(j.at("old_age").get<std::string>());
  if (j.contains("innovation")) {
    s = j.at("innovation").get<std::string>();
    if (s == "gaussian") m.law.kind = InnovationLaw::Kind::gaussian;
    else if (s == "student_t") m.law.kind = InnovationLaw::Kind::student_t;
    else throw ConfigError("unknown innovation law '" + s + "'");
  }
  detail::read_opt(j, "dof", m.law.dof, "model");
  detail::read_opt(j, "flat_priors", m.flat_priors, "model");
  m.law.validate();
  return m;
}

inline json to_json(const Hyperparams& h) {
  return {{"m", h.m}, {"s", h.s}, {"m_beta", h.m_beta}, {"s_beta", h.s_beta}, {"a", h.a}, {"b", h.b}};
}

/// Entries may be a list with one value per coordinate or a single number
/// broadcast to every coordinate. Missing entries keep their defaults.
inline Hyperparams hyper_from_json(const json& j, const ModelVariant& v) {
  detail::reject_unknown(j, {"m", "s", "m_beta", "s_beta", "a", "b"}, "hyper");
  Hyperparams h = Hyperparams::defaults(v);
  const std::size_t K = h.size();
  auto read = [&](const char* key, std::vector<double>& dst) {
    if (!j.contains(key)) return;
    const auto& x = j.at(key);
    if (x.is_number()) {
      dst.assign(K, x.get<double>());
    } else if (x.is_array()) {
      dst = x.get<std::vector<double>>();
    } else {
      throw ConfigError(std::string("'hyper.") + key + "' must be a number or a list");
    }
  };
  read("m", h.m);
  read("s", h.s);
  read("m_beta", h.m_beta);
  read("s_beta", h.s_beta);
  read("a", h.a);
  read("b", h.b);
  h.validate(K);
  return h;
}

inline json to_json(const SamplerConfig& c) {
  json j = {{"n_iter", c.n_iter},
            {"burn_in", c.burn_in},
            {"thin", c.thin},
            {"n_chains", c.n_chains},
            {"seed", c.seed},
            {"blocking", to_string(c.blocking)},
            {"adapt_interval", c.adapt_interval},
            {"initial_proposal_sd", c.initial_proposal_sd},
            {"epsilon", c.epsilon},
            {"threads", c.threads},
            {"init", c.init == InitMode::data ? "data" : "prior"},
            {"rescale_moves", c.rescale_moves}};
  j["target_accept"] = c.target_accept ? json(*c.target_accept) : json(nullptr);
  return j;
}

/// Reads the "sampler" section; variant, law and prior type come from "model".
inline SamplerConfig sampler_from_json(const json& j, const ModelConfig& m) {
  detail::reject_unknown(j,
                         {"n_iter", "burn_in", "thin", "n_chains", "seed", "blocking", "adapt_interval", "target_accept",
                          "initial_proposal_sd", "epsilon", "threads", "init", "rescale_moves"},
                         "sampler");
  SamplerConfig c;
  detail::read_opt(j, "n_iter", c.n_iter, "sampler");
  detail::read_opt(j, "burn_in", c.burn_in, "sampler");
  detail::read_opt(j, "thin", c.thin, "sampler");
  detail::read_opt(j, "n_chains", c.n_chains, "sampler");
  detail::read_opt(j, "seed", c.seed, "sampler");
  if (j.contains("blocking")) c.blocking = parse_blocking(j.at("blocking").get<std::string>());
  detail::read_opt(j, "adapt_interval", c.adapt_interval, "sampler");
  if (j.contains("target_accept") && !j.at("target_accept").is_null()) c.target_accept = j.at("target_accept").get<double>();
  detail::read_opt(j, "initial_proposal_sd", c.initial_proposal_sd, "sampler");
  detail::read_opt(j, "rescale_moves", c.rescale_moves, "sampler");
  detail::read_opt(j, "epsilon", c.epsilon, "sampler");
  detail::read_opt(j, "threads", c.threads, "sampler");
  if (j.contains("init")) {
    const auto s = j.at("init").get<std::string>();
    if (s == "data") c.init = InitMode::data;
    else if (s == "prior") c.init = InitMode::prior;
    else throw ConfigError("unknown sampler.init '" + s + "'");
  }
  c.variant = m.variant;
  c.innovation = m.law;
  c.flat_priors = m.flat_priors;
  return c;
}

inline json to_json(const ForecastConfig& f) {
  return {{"horizon", f.horizon}, {"quantiles", f.quantiles}, {"a0", f.a0}};
}

}  // namespace dysm
