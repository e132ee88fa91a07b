#include "mixseq/pseudo.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mixseq/error.hpp"

namespace mixseq {
namespace {

constexpr std::string_view kHeader = "# mixseq pseudo labels v1";
constexpr double kSimplexTolerance = 1e-6;

void check_simplex(const Eigen::VectorXd& p, const std::string& id, const char* what) {
  if (p.size() == 0 || std::abs(p.sum() - 1.0) > kSimplexTolerance || (p.array() < 0).any()) {
    throw DataError("sample " + id + ": " + what + " probabilities are not normalized");
  }
}

}  // namespace

std::vector<PseudoLabel> pseudo_label(std::span<const SamplePrediction> predictions, double lambda) {
  if (predictions.empty()) throw DataError("pseudo_label: no predictions");
  std::vector<PseudoLabel> out;
  for (const auto& p : predictions) {
    check_simplex(p.verb, p.sample_id, "verb");
    check_simplex(p.noun, p.sample_id, "noun");
    const int verb = argmax(p.verb);
    const int noun = argmax(p.noun);
    const double confidence = (p.verb[verb] + p.noun[noun]) / 2.0;
    if (confidence >= lambda) out.push_back({p.sample_id, verb, noun, confidence});
  }
  return out;
}

void write_pseudo_labels(std::span<const PseudoLabel> labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << kHeader << '\n';
  char buf[32];
  for (const auto& l : labels) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), l.confidence);
    out << l.sample_id << '\t' << l.verb << '\t' << l.noun << '\t' << std::string_view(buf, ptr - buf)
        << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<PseudoLabel> read_pseudo_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw DataError(path.string() + ": not a mixseq pseudo-label file");
  }
  std::vector<PseudoLabel> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    PseudoLabel l;
    std::string conf;
    if (!std::getline(fields, l.sample_id, '\t') || !(fields >> l.verb >> l.noun >> conf)) {
      throw DataError(path.string() + ": malformed line " + std::to_string(line_no));
    }
    auto [ptr, ec] = std::from_chars(conf.data(), conf.data() + conf.size(), l.confidence);
    if (ec != std::errc{} || l.confidence < 0 || l.confidence > 1) {
      throw DataError(path.string() + ": bad confidence on line " + std::to_string(line_no));
    }
    labels.push_back(std::move(l));
  }
  return labels;
}

}  // namespace mixseq
