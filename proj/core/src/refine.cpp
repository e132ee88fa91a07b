#include "mixseq/refine.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mixseq/error.hpp"

namespace mixseq {
namespace {

constexpr std::string_view kPredictionsHeader = "# mixseq predictions v1";

std::string format(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Eigen::VectorXd parse_vector(const std::string& field, const std::string& where) {
  std::vector<double> vals;
  const char* p = field.data();
  const char* end = p + field.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    double v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{}) throw DataError(where + ": bad probability value");
    vals.push_back(v);
    p = next;
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

CoOccurrenceMatrix::CoOccurrenceMatrix(int num_verbs, int num_nouns)
    : counts_(Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_verbs, num_nouns)) {}

CoOccurrenceMatrix CoOccurrenceMatrix::build(const Dataset& source) {
  CoOccurrenceMatrix m(source.num_verbs, source.num_nouns);
  for (const auto& s : source.samples) {
    if (!s.verb_label || !s.noun_label) {
      throw DataError("co-occurrence: unlabeled sample " + s.sample_id);
    }
    m.add(*s.verb_label, *s.noun_label);
  }
  return m;
}

int CoOccurrenceMatrix::nonzeros() const { return static_cast<int>((counts_.array() > 0).count()); }

std::vector<Action> CoOccurrenceMatrix::support() const {
  std::vector<Action> out;
  for (Eigen::Index v = 0; v < counts_.rows(); ++v) {
    for (Eigen::Index n = 0; n < counts_.cols(); ++n) {
      if (counts_(v, n) > 0) out.emplace_back(static_cast<int>(v), static_cast<int>(n));
    }
  }
  return out;
}

Eigen::MatrixXd action_scores(const Eigen::VectorXd& verb, const Eigen::VectorXd& noun) {
  return verb * noun.transpose();
}

Eigen::MatrixXd cooccurrence_filter(const Eigen::VectorXd& verb, const Eigen::VectorXd& noun,
                                    const CoOccurrenceMatrix& matrix, double factor) {
  if (verb.size() != matrix.num_verbs() || noun.size() != matrix.num_nouns()) {
    throw DataError("co-occurrence filter: distributions do not match the matrix shape");
  }
  Eigen::MatrixXd a = action_scores(verb, noun);
  if (factor == 1.0) return a;
  for (Eigen::Index v = 0; v < a.rows(); ++v) {
    for (Eigen::Index n = 0; n < a.cols(); ++n) {
      if (!matrix.seen(static_cast<int>(v), static_cast<int>(n))) a(v, n) *= factor;
    }
  }
  return a;
}

Action action_argmax(const Eigen::MatrixXd& scores) {
  if (scores.size() == 0) throw DataError("argmax of an empty score matrix");
  Action best{0, 0};
  for (Eigen::Index v = 0; v < scores.rows(); ++v) {
    for (Eigen::Index n = 0; n < scores.cols(); ++n) {
      if (scores(v, n) > scores(best.first, best.second)) best = {static_cast<int>(v), static_cast<int>(n)};
    }
  }
  return best;
}

std::vector<SamplePrediction> ensemble(std::span<const std::vector<SamplePrediction>> sets,
                                       std::span<const double> weights) {
  if (sets.empty()) throw DataError("ensemble: no prediction sets");
  if (!weights.empty() && weights.size() != sets.size()) {
    throw DataError("ensemble: weight count does not match the number of sets");
  }
  std::vector<double> w(sets.size(), 1.0 / static_cast<double>(sets.size()));
  if (!weights.empty()) {
    double total = 0;
    for (double x : weights) {
      if (x < 0) throw DataError("ensemble: negative weight");
      total += x;
    }
    if (total <= 0) throw DataError("ensemble: weights sum to zero");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weights[i] / total;
  }

  const auto& first = sets.front();
  std::vector<std::unordered_map<std::string, const SamplePrediction*>> index(sets.size());
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (sets[s].size() != first.size()) throw DataError("ensemble: prediction sets cover different samples");
    for (const auto& p : sets[s]) index[s].emplace(p.sample_id, &p);
  }
  std::vector<SamplePrediction> out;
  out.reserve(first.size());
  for (const auto& p : first) {
    SamplePrediction fused{p.sample_id, w[0] * p.verb, w[0] * p.noun};
    for (std::size_t s = 1; s < sets.size(); ++s) {
      auto it = index[s].find(p.sample_id);
      if (it == index[s].end()) throw DataError("ensemble: sample " + p.sample_id + " missing from set " + std::to_string(s));
      if (it->second->verb.size() != p.verb.size() || it->second->noun.size() != p.noun.size()) {
        throw DataError("ensemble: vocabulary mismatch for sample " + p.sample_id);
      }
      fused.verb += w[s] * it->second->verb;
      fused.noun += w[s] * it->second->noun;
    }
    out.push_back(std::move(fused));
  }
  return out;
}

Accuracy evaluate(std::span<const SamplePrediction> predictions, const GroundTruth& truth,
                  const CoOccurrenceMatrix* filter, double factor) {
  Accuracy acc;
  std::size_t verb_ok = 0;
  std::size_t noun_ok = 0;
  std::size_t action_ok = 0;
  for (const auto& p : predictions) {
    const auto& [tv, tn] = truth.at(p.sample_id);
    const int v = argmax(p.verb);
    const int n = argmax(p.noun);
    verb_ok += v == tv;
    noun_ok += n == tn;
    Action a{v, n};
    if (filter) a = action_argmax(cooccurrence_filter(p.verb, p.noun, *filter, factor));
    action_ok += a.first == tv && a.second == tn;
  }
  acc.count = predictions.size();
  if (acc.count > 0) {
    const double n = static_cast<double>(acc.count);
    acc.verb = static_cast<double>(verb_ok) / n;
    acc.noun = static_cast<double>(noun_ok) / n;
    acc.action = static_cast<double>(action_ok) / n;
  }
  return acc;
}

void write_predictions(std::span<const SamplePrediction> predictions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << kPredictionsHeader << '\n';
  for (const auto& p : predictions) {
    out << p.sample_id << '\t';
    for (Eigen::Index i = 0; i < p.verb.size(); ++i) out << (i ? " " : "") << format(p.verb[i]);
    out << '\t';
    for (Eigen::Index i = 0; i < p.noun.size(); ++i) out << (i ? " " : "") << format(p.noun[i]);
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<SamplePrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kPredictionsHeader) {
    throw DataError(path.string() + ": not a mixseq predictions file");
  }
  std::vector<SamplePrediction> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw DataError(where + ": expected 3 tab-separated fields");
    SamplePrediction p;
    p.sample_id = line.substr(0, t1);
    p.verb = parse_vector(line.substr(t1 + 1, t2 - t1 - 1), where);
    p.noun = parse_vector(line.substr(t2 + 1), where);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mixseq
