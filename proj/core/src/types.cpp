#include "mixseq/types.hpp"

#include <set>

#include "mixseq/error.hpp"

namespace mixseq {

const char* to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

bool ActionSample::operator==(const ActionSample& other) const {
  if (sample_id != other.sample_id || video_id != other.video_id ||
      position_index != other.position_index || domain != other.domain ||
      verb_label != other.verb_label || noun_label != other.noun_label ||
      features.size() != other.features.size()) {
    return false;
  }
  for (const auto& [name, m] : features) {
    auto it = other.features.find(name);
    if (it == other.features.end() || it->second.rows() != m.rows() ||
        it->second.cols() != m.cols() || it->second != m) {
      return false;
    }
  }
  return true;
}

int Dataset::fused_dim() const {
  int d = 0;
  for (const auto& m : modalities) d += m.feature_dim;
  return d;
}

void Dataset::validate() const {
  std::set<std::pair<std::string, int>> positions;
  for (const auto& s : samples) {
    if (s.domain != domain) {
      throw DataError("sample " + s.sample_id + " has domain " + to_string(s.domain) +
                      " inside a " + to_string(domain) + " dataset");
    }
    const bool labeled = s.verb_label.has_value() && s.noun_label.has_value();
    if (domain == Domain::kSource && !labeled) {
      throw DataError("source sample " + s.sample_id + " is missing labels");
    }
    if (domain == Domain::kTarget && (s.verb_label || s.noun_label)) {
      throw DataError("target sample " + s.sample_id + " carries labels");
    }
    if (labeled && (*s.verb_label < 0 || *s.verb_label >= num_verbs || *s.noun_label < 0 ||
                    *s.noun_label >= num_nouns)) {
      throw DataError("sample " + s.sample_id + " has labels outside the vocabulary");
    }
    if (s.position_index < 0) {
      throw DataError("sample " + s.sample_id + " has a negative position index");
    }
    if (!positions.emplace(s.video_id, s.position_index).second) {
      throw DataError("duplicate position " + std::to_string(s.position_index) + " in video " +
                      s.video_id);
    }
    if (s.features.size() != modalities.size()) {
      throw DataError("sample " + s.sample_id + " has " + std::to_string(s.features.size()) +
                      " modalities, expected " + std::to_string(modalities.size()));
    }
    for (const auto& m : modalities) {
      auto it = s.features.find(m.name);
      if (it == s.features.end()) {
        throw DataError("sample " + s.sample_id + " is missing modality '" + m.name + "'");
      }
      if (it->second.rows() != m.clip_count || it->second.cols() != m.feature_dim) {
        throw DataError("sample " + s.sample_id + " modality '" + m.name + "' has shape " +
                        std::to_string(it->second.rows()) + "x" +
                        std::to_string(it->second.cols()));
      }
    }
  }
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) throw DataError("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

const std::pair<int, int>& GroundTruth::at(const std::string& sample_id) const {
  auto it = labels.find(sample_id);
  if (it == labels.end()) throw DataError("no ground truth for sample " + sample_id);
  return it->second;
}

}  // namespace mixseq
