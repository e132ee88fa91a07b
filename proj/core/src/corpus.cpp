#include "mixseq/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <zlib.h>

#include "mixseq/error.hpp"

namespace mixseq {
namespace {

constexpr char kDatasetMagic[8] = {'M', 'S', 'Q', 'D', 'A', 'T', 'A', '\0'};
constexpr std::string_view kTruthHeader = "# mixseq ground truth v1";

// Little-endian record writer over an in-memory buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw DataError("string too long for dataset format: " + s.substr(0, 32));
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* data, std::size_t n) { buf_.append(data, n); }
  std::string& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    auto n = u16();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void bytes(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  const char* at(std::size_t p) const { return data_.data() + p; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError(source_ + ": truncated dataset file");
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::uint32_t crc(std::uint32_t seed, const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(seed, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

Eigen::VectorXd random_unit(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  const double n = v.norm();
  return n > 0 ? Eigen::VectorXd(v / n) : v;
}

}  // namespace

void GrammarSpec::validate() const {
  if (num_verbs <= 0 || num_nouns <= 0) throw DataError("grammar: vocabulary sizes must be positive");
  if (action_set.empty()) throw DataError("grammar: action_set is empty");
  std::set<Action> seen;
  for (const auto& a : action_set) {
    if (a.first < 0 || a.first >= num_verbs || a.second < 0 || a.second >= num_nouns) {
      throw DataError("grammar: action outside the vocabulary");
    }
    if (!seen.insert(a).second) throw DataError("grammar: duplicate action in action_set");
  }
  const auto n = static_cast<Eigen::Index>(action_set.size());
  if (transition.rows() != n || transition.cols() != n) {
    throw DataError("grammar: transition must be |action_set| square");
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    if ((transition.row(r).array() < 0).any()) throw DataError("grammar: negative transition entry");
    if (std::abs(transition.row(r).sum() - 1.0) > 1e-9) {
      throw DataError("grammar: transition row " + std::to_string(r) + " does not sum to 1");
    }
  }
  if (videos_per_domain <= 0 || actions_per_video <= 0) {
    throw DataError("grammar: video counts must be positive");
  }
  if (modalities.empty()) throw DataError("grammar: no modalities");
  for (const auto& m : modalities) {
    if (m.clip_count <= 0 || m.feature_dim <= 0) {
      throw DataError("grammar: modality '" + m.name + "' has an empty shape");
    }
  }
  if (shift_magnitude < 0 || noise_scale <= 0 || class_separation < 0) {
    throw DataError("grammar: shift/noise/separation out of range");
  }
}

GrammarSpec make_grammar(const PipelineConfig& config, Rng& rng) {
  validate(config);
  GrammarSpec spec;
  spec.num_verbs = config.num_verbs;
  spec.num_nouns = config.num_nouns;
  spec.videos_per_domain = config.videos_per_domain;
  spec.actions_per_video = config.actions_per_video;
  spec.modalities = config.modalities;
  spec.class_separation = config.class_separation;
  spec.shift_magnitude = config.shift_magnitude;
  spec.shift_shared_fraction = config.shift_shared_fraction;
  spec.noise_scale = config.noise_scale;

  // Cover every verb and noun first (when the budget allows), then fill the
  // rest uniformly from the unused pairs.
  const int V = config.num_verbs;
  const int N = config.num_nouns;
  const int A = config.num_actions;
  Rng pick = rng.derive("action_set");
  std::set<Action> chosen;
  std::vector<Action> actions;
  if (A >= std::max(V, N)) {
    std::vector<int> verbs(static_cast<std::size_t>(std::max(V, N)));
    std::vector<int> nouns(verbs.size());
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      verbs[i] = static_cast<int>(i % static_cast<std::size_t>(V));
      nouns[i] = static_cast<int>(i % static_cast<std::size_t>(N));
    }
    pick.shuffle(std::span<int>(nouns));
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      Action a{verbs[i], nouns[i]};
      if (chosen.insert(a).second) actions.push_back(a);
    }
  }
  std::vector<Action> rest;
  for (int v = 0; v < V; ++v) {
    for (int n = 0; n < N; ++n) {
      if (!chosen.count({v, n})) rest.emplace_back(v, n);
    }
  }
  for (auto idx : pick.sample_without_replacement(rest.size(), static_cast<std::size_t>(A) - actions.size())) {
    actions.push_back(rest[idx]);
  }
  pick.shuffle(std::span<Action>(actions));
  spec.action_set = actions;

  Rng trans = rng.derive("transition");
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(A, A);
  if (config.transition_successors == 1) {
    std::vector<std::size_t> perm = trans.sample_without_replacement(static_cast<std::size_t>(A),
                                                                     static_cast<std::size_t>(A));
    for (int a = 0; a < A; ++a) t(a, static_cast<Eigen::Index>(perm[static_cast<std::size_t>(a)])) = 1.0;
  } else {
    for (int a = 0; a < A; ++a) {
      auto succ = trans.sample_without_replacement(static_cast<std::size_t>(A),
                                                   static_cast<std::size_t>(config.transition_successors));
      double total = 0;
      for (auto s : succ) {
        const double w = trans.uniform(0.5, 1.5);
        t(a, static_cast<Eigen::Index>(s)) = w;
        total += w;
      }
      t.row(a) /= total;
    }
  }
  const double eps = config.transition_smoothing;
  t = (1.0 - eps) * t + Eigen::MatrixXd::Constant(A, A, eps / A);
  for (int a = 0; a < A; ++a) t.row(a) /= t.row(a).sum();
  spec.transition = t;
  spec.validate();
  return spec;
}

GeneratedCorpus generate_corpus(const GrammarSpec& spec, Rng& rng) {
  spec.validate();
  const auto A = static_cast<int>(spec.action_set.size());
  int total_dim = 0;
  for (const auto& m : spec.modalities) total_dim += m.feature_dim;

  // Class-conditional means: additive verb and noun components so both
  // heads have a learnable signal.
  Rng means = rng.derive("means");
  auto draw = [&](int count) {
    Eigen::MatrixXd m(count, total_dim);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < total_dim; ++j) m(i, j) = spec.class_separation * means.normal();
    }
    return m;
  };
  const Eigen::MatrixXd verb_means = draw(spec.num_verbs);
  const Eigen::MatrixXd noun_means = draw(spec.num_nouns);

  // Target offset per action: a blend of one shared direction and a
  // class-specific direction, rescaled to exactly shift_magnitude.
  Rng shift_rng = rng.derive("shift");
  const Eigen::VectorXd shared = random_unit(shift_rng, total_dim);
  Eigen::MatrixXd offsets(A, total_dim);
  for (int a = 0; a < A; ++a) {
    Eigen::VectorXd dir = spec.shift_shared_fraction * shared +
                          (1.0 - spec.shift_shared_fraction) * random_unit(shift_rng, total_dim);
    const double n = dir.norm();
    if (n > 0) {
      offsets.row(a) = (spec.shift_magnitude / n) * dir.transpose();
    } else {
      offsets.row(a).setZero();
    }
  }

  GeneratedCorpus out;
  for (Domain domain : {Domain::kSource, Domain::kTarget}) {
    Dataset& ds = domain == Domain::kSource ? out.source : out.target;
    ds.domain = domain;
    ds.num_verbs = spec.num_verbs;
    ds.num_nouns = spec.num_nouns;
    ds.modalities = spec.modalities;
    ds.samples.reserve(static_cast<std::size_t>(spec.videos_per_domain * spec.actions_per_video));
    const char prefix = domain == Domain::kSource ? 'S' : 'T';
    Rng domain_rng = rng.derive(domain == Domain::kSource ? "source" : "target");

    for (int v = 0; v < spec.videos_per_domain; ++v) {
      Rng video_rng = domain_rng.derive(static_cast<std::uint64_t>(v));
      char video_id[32];
      std::snprintf(video_id, sizeof(video_id), "%c-v%04d", prefix, v);
      int state = static_cast<int>(video_rng.below(static_cast<std::uint64_t>(A)));
      for (int p = 0; p < spec.actions_per_video; ++p) {
        if (p > 0) {
          const double u = video_rng.uniform();
          double acc = 0;
          int next = A - 1;
          for (int j = 0; j < A; ++j) {
            acc += spec.transition(state, j);
            if (u < acc) {
              next = j;
              break;
            }
          }
          state = next;
        }
        const auto [verb, noun] = spec.action_set[static_cast<std::size_t>(state)];
        ActionSample s;
        char sample_id[48];
        std::snprintf(sample_id, sizeof(sample_id), "%s-a%03d", video_id, p);
        s.sample_id = sample_id;
        s.video_id = video_id;
        s.position_index = p;
        s.domain = domain;
        Eigen::RowVectorXd mean = verb_means.row(verb) + noun_means.row(noun);
        if (domain == Domain::kTarget) mean += offsets.row(state);
        int offset = 0;
        for (const auto& m : spec.modalities) {
          FeatureMatrix f(m.clip_count, m.feature_dim);
          for (int c = 0; c < m.clip_count; ++c) {
            for (int d = 0; d < m.feature_dim; ++d) {
              f(c, d) = static_cast<float>(mean[offset + d] + spec.noise_scale * video_rng.normal());
            }
          }
          s.features.emplace(m.name, std::move(f));
          offset += m.feature_dim;
        }
        if (domain == Domain::kSource) {
          s.verb_label = verb;
          s.noun_label = noun;
        } else {
          out.target_truth.labels.emplace(s.sample_id, Action{verb, noun});
        }
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  ByteWriter w;
  w.raw(kDatasetMagic, sizeof(kDatasetMagic));
  w.u32(kDatasetFormatVersion);
  w.u8(static_cast<std::uint8_t>(dataset.domain));
  w.u32(static_cast<std::uint32_t>(dataset.num_verbs));
  w.u32(static_cast<std::uint32_t>(dataset.num_nouns));
  w.u32(static_cast<std::uint32_t>(dataset.modalities.size()));
  for (const auto& m : dataset.modalities) {
    w.str(m.name);
    w.u32(static_cast<std::uint32_t>(m.clip_count));
    w.u32(static_cast<std::uint32_t>(m.feature_dim));
  }
  w.u64(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    const std::size_t start = w.buffer().size();
    w.str(s.sample_id);
    w.str(s.video_id);
    w.u32(static_cast<std::uint32_t>(s.position_index));
    w.u8(static_cast<std::uint8_t>(s.domain));
    w.i32(s.verb_label.value_or(-1));
    w.i32(s.noun_label.value_or(-1));
    for (const auto& m : dataset.modalities) {
      const auto& f = s.features.at(m.name);
      for (Eigen::Index i = 0; i < f.size(); ++i) w.f32(f.data()[i]);
    }
    const auto& b = w.buffer();
    w.u32(crc(0, b.data() + start, b.size() - start));
  }
  write_file(path, w.buffer());
}

Dataset read_dataset(const std::filesystem::path& path, std::span<const ModalitySpec> expected) {
  const std::string data = read_file(path);
  const std::string src = path.string();
  ByteReader r(data, src);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw DataError(src + ": not a mixseq dataset file");
  }
  const auto version = r.u32();
  if (version != kDatasetFormatVersion) {
    throw DataError(src + ": unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  const auto domain = r.u8();
  if (domain > 1) throw DataError(src + ": bad domain tag");
  ds.domain = static_cast<Domain>(domain);
  ds.num_verbs = static_cast<int>(r.u32());
  ds.num_nouns = static_cast<int>(r.u32());
  const auto num_mods = r.u32();
  for (std::uint32_t i = 0; i < num_mods; ++i) {
    ModalitySpec m;
    m.name = r.str();
    m.clip_count = static_cast<int>(r.u32());
    m.feature_dim = static_cast<int>(r.u32());
    ds.modalities.push_back(std::move(m));
  }
  for (const auto& want : expected) {
    auto it = std::find_if(ds.modalities.begin(), ds.modalities.end(),
                           [&](const ModalitySpec& m) { return m.name == want.name; });
    if (it == ds.modalities.end()) {
      throw DataError(src + ": schema mismatch, missing modality '" + want.name + "'");
    }
    if (*it != want) {
      throw DataError(src + ": schema mismatch, modality '" + want.name + "' has shape " +
                      std::to_string(it->clip_count) + "x" + std::to_string(it->feature_dim));
    }
  }
  const auto count = r.u64();
  ds.samples.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    ActionSample s;
    s.sample_id = r.str();
    s.video_id = r.str();
    s.position_index = static_cast<int>(r.u32());
    const auto sd = r.u8();
    if (sd > 1) throw DataError(src + ": bad sample domain in record " + std::to_string(i));
    s.domain = static_cast<Domain>(sd);
    const auto verb = r.i32();
    const auto noun = r.i32();
    if (verb >= 0) s.verb_label = verb;
    if (noun >= 0) s.noun_label = noun;
    for (const auto& m : ds.modalities) {
      FeatureMatrix f(m.clip_count, m.feature_dim);
      for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = r.f32();
      s.features.emplace(m.name, std::move(f));
    }
    const std::size_t end = r.pos();
    const auto stored = r.u32();
    if (crc(0, r.at(start), end - start) != stored) {
      throw DataError(src + ": corrupted feature block in record " + std::to_string(i) + " (" +
                      s.sample_id + ")");
    }
    ds.samples.push_back(std::move(s));
  }
  if (!r.done()) throw DataError(src + ": trailing bytes after last record");
  ds.validate();
  return ds;
}

void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  std::map<std::string, Action> sorted(truth.labels.begin(), truth.labels.end());
  std::string out(kTruthHeader);
  out += '\n';
  for (const auto& [id, a] : sorted) {
    out += id + '\t' + std::to_string(a.first) + '\t' + std::to_string(a.second) + '\n';
  }
  write_file(path, out);
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kTruthHeader) {
    throw DataError(path.string() + ": not a mixseq ground-truth file");
  }
  GroundTruth truth;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id;
    int verb = -1;
    int noun = -1;
    if (!std::getline(fields, id, '\t') || !(fields >> verb >> noun) || verb < 0 || noun < 0) {
      throw DataError(path.string() + ": malformed line " + std::to_string(line_no));
    }
    truth.labels.emplace(id, Action{verb, noun});
  }
  return truth;
}

std::uint32_t feature_checksum(const Dataset& dataset) {
  std::uint32_t c = 0;
  for (const auto& s : dataset.samples) {
    for (const auto& m : dataset.modalities) {
      const auto& f = s.features.at(m.name);
      c = crc(c, reinterpret_cast<const char*>(f.data()),
              static_cast<std::size_t>(f.size()) * sizeof(float));
    }
  }
  return c;
}

}  // namespace mixseq
