#include "grace/eval.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "grace/errors.hpp"

namespace grace {
namespace {

void finish(PrfScore& s, const char* what, std::vector<std::string>* diagnostics) {
  if (s.n_pred > 0) {
    s.precision = static_cast<double>(s.n_correct) / static_cast<double>(s.n_pred);
  } else if (diagnostics != nullptr) {
    diagnostics->push_back(std::string(what) + ": no predicted pairs, precision set to 0");
  }
  if (s.n_gold > 0) {
    s.recall = static_cast<double>(s.n_correct) / static_cast<double>(s.n_gold);
  } else if (diagnostics != nullptr) {
    diagnostics->push_back(std::string(what) + ": no gold pairs, recall set to 0");
  }
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0 ? 2 * s.precision * s.recall / denom : 0.0;
}

nlohmann::ordered_json score_json(const PrfScore& s) {
  nlohmann::ordered_json j;
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["f1"] = s.f1;
  j["n_gold"] = s.n_gold;
  j["n_pred"] = s.n_pred;
  j["n_correct"] = s.n_correct;
  return j;
}

}  // namespace

MetricsReport pair_prf(const PairSets& gold, const PairSets& pred) {
  if (gold.size() != pred.size()) {
    throw ShapeError("pair_prf: " + std::to_string(gold.size()) + " gold sentences vs " +
                     std::to_string(pred.size()) + " predicted");
  }
  MetricsReport r;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const std::set<AspectPolarityPair> g(gold[s].begin(), gold[s].end());
    const std::set<AspectPolarityPair> p(pred[s].begin(), pred[s].end());
    r.overall.n_gold += g.size();
    r.overall.n_pred += p.size();
    for (const auto& x : g) {
      if (x.polarity != Polarity::O) ++r.per_polarity[id_of(x.polarity)].n_gold;
    }
    for (const auto& x : p) {
      if (x.polarity == Polarity::O) continue;
      ++r.per_polarity[id_of(x.polarity)].n_pred;
      if (g.count(x) != 0) {
        ++r.overall.n_correct;
        ++r.per_polarity[id_of(x.polarity)].n_correct;
      }
    }
  }
  finish(r.overall, "overall", &r.diagnostics);
  for (auto& s : r.per_polarity) finish(s, "", nullptr);
  return r;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j = score_json(report.overall);
  nlohmann::ordered_json per;
  for (int c = 0; c < 4; ++c) per[std::string(to_string(polarity_from_id(c)))] = score_json(report.per_polarity[c]);
  j["per_polarity"] = per;
  j["diagnostics"] = report.diagnostics;
  return j.dump(2);
}

double LabelStats::o_share() const {
  return tokens == 0 ? 0.0 : static_cast<double>(term[id_of(TermTag::O)]) / static_cast<double>(tokens);
}

double LabelStats::o_ratio() const {
  const std::size_t non_o = tokens - term[id_of(TermTag::O)];
  return non_o == 0 ? 0.0 : static_cast<double>(term[id_of(TermTag::O)]) / static_cast<double>(non_o);
}

LabelStats label_stats(const std::vector<TaggedSentence>& corpus) {
  LabelStats st;
  for (const auto& s : corpus) {
    ++st.sentences;
    st.tokens += s.size();
    for (TermTag t : s.terms) ++st.term[id_of(t)];
    for (Polarity p : s.polarities) ++st.polarity[id_of(p)];
  }
  return st;
}

std::string label_stats_to_json(const LabelStats& stats) {
  nlohmann::ordered_json j;
  j["sentences"] = stats.sentences;
  j["tokens"] = stats.tokens;
  nlohmann::ordered_json term, pol;
  for (TermTag t : kAllTermTags) term[std::string(to_string(t))] = stats.term[id_of(t)];
  for (Polarity p : kAllPolarities) pol[std::string(to_string(p))] = stats.polarity[id_of(p)];
  j["term"] = term;
  j["polarity"] = pol;
  j["o_share"] = stats.o_share();
  j["o_ratio"] = stats.o_ratio();
  return j.dump(2);
}

void export_gradient_stats(const std::vector<HistogramSnapshot>& snapshots, const std::filesystem::path& path) {
  if (snapshots.empty()) throw ShapeError("export_gradient_stats: no snapshots recorded");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write " + path.string());
  write_histogram_snapshots(out, snapshots);
  if (!out) throw DataError(DataError::Kind::Io, 0, "write failed for " + path.string());
}

}  // namespace grace
