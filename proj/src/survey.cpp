#include "cbx/survey.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <random>

#include "cbx/csv.hpp"
#include "cbx/errors.hpp"
#include "cbx/rng.hpp"

namespace cbx {

namespace {

const std::vector<std::string> kViews{"views_immigration", "views_global_warming", "views_right_bear_arms",
                                      "views_abortion"};
const std::vector<std::string> kNews{"news_fox", "news_cnn", "news_nyt", "news_wapo", "news_wsj"};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

using Codebook = std::map<std::string, double>;

Codebook frequency_codes() {
  return {{"daily", 1},
          {"several times a week", 2},
          {"once a week", 3},
          {"several times a month", 4},
          {"several times a year", 5},
          {"several times year", 5},
          {"once a year or less", 6}};
}

const std::map<std::string, Codebook>& codebooks() {
  static const std::map<std::string, Codebook> books = [] {
    std::map<std::string, Codebook> b;
    b["male"] = {{"male", 1}, {"female", 0}, {"other", 0}, {"prefer not to say", 0}};
    b["race"] = {{"white", 1},
                 {"black or african american", 0},
                 {"american indian or alaska native", 0},
                 {"asian", 0},
                 {"native hawaiian or pacific islander", 0},
                 {"other", 0}};
    b["married"] = {{"married", 1}, {"single", 0}, {"widowed", 0}, {"divorced or separated", 0}};
    b["last_donation"] = {
        {"within this month", 1}, {"within this year", 2}, {"more than a year ago", 3}, {"never", 4}};
    b["political_leaning"] = {{"strong democrat", 1},   {"moderate democrat", 2},   {"leaning democrat", 3},
                              {"independent/none", 4},  {"independent", 4},        {"none", 4},
                              {"leaning republican", 5}, {"moderate republican", 6}, {"strong republican", 7}};
    b["religious"] = {{"very religious", 1}, {"moderately religious", 1}, {"not religious", 0}};
    b["rural"] = {{"rural", 1}, {"suburban", 1}, {"urban", 0}};
    const Codebook agree{{"strongly disagree", 1},
                         {"somewhat disagree", 2},
                         {"neither agree nor disagree", 3},
                         {"somewhat agree", 4},
                         {"strongly agree", 5}};
    for (const auto& v : kViews) b[v] = agree;
    for (const auto& v : kNews) b[v] = frequency_codes();
    b["social_media"] = frequency_codes();
    return b;
  }();
  return books;
}

}  // namespace

ContextSchema survey_schema() {
  using K = FeatureKind;
  std::vector<FeatureSpec> f{{"age", K::IntegerOrdinal, 18, 100},
                             {"male", K::Binary, 0, 1},
                             {"race", K::Binary, 0, 1},
                             {"married", K::Binary, 0, 1},
                             {"last_donation", K::IntegerOrdinal, 1, 4},
                             {"political_leaning", K::IntegerOrdinal, 1, 7},
                             {"religious", K::Binary, 0, 1},
                             {"rural", K::Binary, 0, 1}};
  for (const auto& v : kViews) f.push_back({v, K::IntegerOrdinal, 1, 5});
  for (const auto& v : kNews) f.push_back({v, K::IntegerOrdinal, 1, 6});
  f.push_back({"social_media", K::IntegerOrdinal, 1, 6});
  return ContextSchema(std::move(f), -10, 10);
}

ArmSet survey_arms() {
  return ArmSet({"aipac", "blm", "zuckerberg", "clinton", "green", "nra", "peta", "planned"});
}

double corpus_mean(const CorpusParams& params, std::span<const double> x, ArmIndex arm) {
  const auto w = static_cast<std::size_t>(arm);
  const double s = (x[5] - 4.0) / 3.0;
  const double a = (x[11] - 3.0) / 2.0;
  const double young = x[0] < 30 ? 1.0 : 0.0;
  return params.base.at(w) + params.ideology.at(w) * s + params.abortion.at(w) * a + params.young.at(w) * young;
}

ObservationLog generate_corpus(std::size_t rows, std::uint64_t seed, const CorpusParams& params, int batch_size) {
  const ContextSchema schema = survey_schema();
  const ArmSet arms = survey_arms();
  if (params.base.size() != static_cast<std::size_t>(arms.size()) || params.ideology.size() != params.base.size() ||
      params.abortion.size() != params.base.size() || params.young.size() != params.base.size())
    throw std::invalid_argument("corpus parameters need one entry per arm");
  ObservationLog log(schema, arms);
  Rng rng = make_rng(seed, Purpose::Corpus);
  std::normal_distribution<double> normal;
  auto coded = [&](double center, double slope, double z, double sd, double lo, double hi) {
    return std::clamp(std::round(center + slope * z + sd * normal(rng)), lo, hi);
  };
  auto bernoulli = [&](double p) { return uniform01(rng) < p ? 1.0 : 0.0; };
  const int K = arms.size();
  const std::vector<double> e(static_cast<std::size_t>(K), 1.0 / K);
  for (std::size_t i = 0; i < rows; ++i) {
    const double z = normal(rng);  // latent ideology, positive = conservative
    std::vector<double> x;
    x.push_back(std::clamp(std::round(45.0 + 15.0 * normal(rng)), 18.0, 90.0));
    x.push_back(bernoulli(0.45));
    x.push_back(bernoulli(0.72 + 0.08 * std::tanh(z)));
    x.push_back(bernoulli(0.45 + 0.1 * std::tanh(z)));
    x.push_back(coded(2.6, 0.0, 0.0, 1.0, 1, 4));
    x.push_back(coded(4.0, 1.7, z, 0.9, 1, 7));
    x.push_back(bernoulli(0.5 + 0.25 * std::tanh(z)));
    x.push_back(bernoulli(0.55 + 0.15 * std::tanh(z)));
    x.push_back(coded(3.0, 0.9, z, 0.9, 1, 5));    // tougher on immigration
    x.push_back(coded(3.8, -0.8, z, 0.9, 1, 5));   // act on global warming
    x.push_back(coded(3.2, -0.9, z, 0.9, 1, 5));   // limit right to bear arms
    x.push_back(coded(2.4, 1.0, z, 0.9, 1, 5));    // restrict abortion
    x.push_back(coded(4.0, -1.0, z, 1.2, 1, 6));   // fox (1 = daily)
    x.push_back(coded(3.8, 0.8, z, 1.2, 1, 6));    // cnn
    x.push_back(coded(4.3, 0.6, z, 1.2, 1, 6));    // nyt
    x.push_back(coded(4.5, 0.5, z, 1.2, 1, 6));    // wapo
    x.push_back(coded(4.6, 0.0, z, 1.2, 1, 6));    // wsj
    x.push_back(std::clamp(std::round(1.4 + 0.03 * (x[0] - 45.0) + 1.0 * std::abs(normal(rng))), 1.0, 6.0));
    Observation obs;
    obs.t = static_cast<std::int64_t>(i) + 1;
    obs.batch = static_cast<int>(i / static_cast<std::size_t>(batch_size));
    obs.arm = static_cast<ArmIndex>(uniform_index(rng, static_cast<std::size_t>(K)));
    obs.y = std::clamp(std::round(corpus_mean(params, x, obs.arm) + params.noise_sd * normal(rng)), -10.0, 10.0);
    obs.x = std::move(x);
    obs.e = e;
    log.append(std::move(obs));
  }
  log.set_metadata({{"source", "synthetic-corpus"}, {"seed", seed}, {"rows", rows}});
  return log;
}

ObservationLog ingest_survey_csv(const std::string& text, IngestReport* report) {
  const ContextSchema schema = survey_schema();
  const ArmSet arms = survey_arms();
  const int K = arms.size();
  const auto rows = csv::parse(text);
  if (rows.empty() || rows[0].empty()) throw ValidationError("survey CSV is empty");
  const auto& header = rows[0];

  std::vector<std::optional<std::size_t>> feature_col(schema.size());
  std::optional<std::size_t> arm_col, outcome_col, t_col, batch_col, attention_col;
  std::vector<std::optional<std::size_t>> e_col(static_cast<std::size_t>(K));
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (auto j = schema.index_of(h)) feature_col[*j] = c;
    else if (h == "arm" || h == "charity") arm_col = c;
    else if (h == "outcome") outcome_col = c;
    else if (h == "t") t_col = c;
    else if (h == "batch") batch_col = c;
    else if (h == "attention_check") attention_col = c;
    else if (h.rfind("e_", 0) == 0 && h.size() > 2 && std::all_of(h.begin() + 2, h.end(), ::isdigit) &&
             std::stoi(h.substr(2)) >= 1 && std::stoi(h.substr(2)) <= K)
      e_col[static_cast<std::size_t>(std::stoi(h.substr(2)) - 1)] = c;
    else throw ValidationError("unknown column '" + h + "'");
  }
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (!feature_col[j]) throw ValidationError("missing column '" + schema.feature(j).name + "'");
  if (!arm_col) throw ValidationError("missing column 'arm'");
  if (!outcome_col) throw ValidationError("missing column 'outcome'");
  const bool has_e = std::any_of(e_col.begin(), e_col.end(), [](const auto& c) { return c.has_value(); });
  if (has_e && !std::all_of(e_col.begin(), e_col.end(), [](const auto& c) { return c.has_value(); }))
    throw ValidationError("propensity columns e_1..e_" + std::to_string(K) + " must all be present");

  ObservationLog log(schema, arms);
  IngestReport rep;
  std::int64_t next_t = 1;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != header.size()) throw RowError(r - 1, "expected " + std::to_string(header.size()) + " fields");
    ++rep.rows_read;
    Observation obs;
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const std::string& raw = f[*feature_col[j]];
      const std::string name = schema.feature(j).name;
      const auto& books = codebooks();
      auto book = books.find(name);
      const std::string key = lower(raw);
      if (book != books.end() && book->second.count(key)) {
        obs.x.push_back(book->second.at(key));
      } else {
        try {
          obs.x.push_back(csv::parse_double(raw));
        } catch (const ValidationError&) {
          throw RowError(r - 1, "column '" + name + "': unrecognized value '" + raw + "'");
        }
      }
    }
    const auto arm = arms.index_of(lower(f[*arm_col]));
    if (!arm) throw RowError(r - 1, "unknown arm '" + f[*arm_col] + "'");
    if (attention_col && lower(f[*attention_col]) != arms.alias(*arm)) {
      ++rep.dropped_attention;
      continue;
    }
    obs.arm = *arm;
    obs.y = csv::parse_double(f[*outcome_col]);
    obs.t = t_col ? csv::parse_int(f[*t_col]) : next_t;
    obs.batch = batch_col ? static_cast<int>(csv::parse_int(f[*batch_col])) : 0;
    if (has_e)
      for (int w = 0; w < K; ++w) obs.e.push_back(csv::parse_double(f[*e_col[static_cast<std::size_t>(w)]]));
    else
      obs.e.assign(static_cast<std::size_t>(K), 1.0 / K);
    next_t = obs.t + 1;
    try {
      log.append(std::move(obs));
    } catch (const RowError&) {
      throw;
    } catch (const ValidationError& e) {
      throw RowError(r - 1, e.what());
    }
  }
  if (log.empty()) throw ValidationError("survey CSV has no data rows");
  if (report) *report = rep;
  return log;
}

}  // namespace cbx
