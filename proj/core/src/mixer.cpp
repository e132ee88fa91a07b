#include "mixseq/mixer.hpp"

#include <algorithm>
#include <unordered_map>

#include "mixseq/error.hpp"

namespace mixseq {

bool Window::labeled() const {
  return std::all_of(slots.begin(), slots.end(),
                     [](const WindowSlot& s) { return s.verb >= 0 && s.noun >= 0; });
}

std::vector<Window> build_windows(const Dataset& dataset, int w) {
  if (w <= 0 || w % 2 == 0) throw ConfigError("window_size", "must be an odd positive integer");
  if (dataset.samples.empty()) throw DataError("build_windows: empty dataset");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const ActionSample*>> videos;
  for (const auto& s : dataset.samples) {
    auto [it, inserted] = videos.try_emplace(s.video_id);
    if (inserted) order.push_back(s.video_id);
    it->second.push_back(&s);
  }

  const int half = (w - 1) / 2;
  std::vector<Window> windows;
  windows.reserve(dataset.samples.size());
  for (const auto& vid : order) {
    auto& actions = videos[vid];
    std::stable_sort(actions.begin(), actions.end(), [](const ActionSample* a, const ActionSample* b) {
      return a->position_index < b->position_index;
    });
    const int n = static_cast<int>(actions.size());
    for (int c = 0; c < n; ++c) {
      Window win;
      win.slots.reserve(static_cast<std::size_t>(w));
      for (int off = -half; off <= half; ++off) {
        const int idx = std::clamp(c + off, 0, n - 1);
        const ActionSample* s = actions[static_cast<std::size_t>(idx)];
        WindowSlot slot;
        slot.sample = s;
        slot.verb = s->verb_label.value_or(-1);
        slot.noun = s->noun_label.value_or(-1);
        slot.padded = idx != c + off;
        slot.effective_domain = s->domain;
        win.slots.push_back(slot);
      }
      windows.push_back(std::move(win));
    }
  }
  return windows;
}

TargetPool::TargetPool(const Dataset& target, std::span<const PseudoLabel> labels) {
  std::unordered_map<std::string, const ActionSample*> by_id;
  for (const auto& s : target.samples) by_id.emplace(s.sample_id, &s);
  for (const auto& l : labels) {
    auto it = by_id.find(l.sample_id);
    if (it == by_id.end()) throw DataError("pseudo label for unknown target sample " + l.sample_id);
    if (it->second->domain != Domain::kTarget) {
      throw DataError("pseudo label attached to non-target sample " + l.sample_id);
    }
    by_action_[{l.verb, l.noun}].push_back(it->second);
    ++size_;
  }
}

std::span<const ActionSample* const> TargetPool::candidates(int verb, int noun) const {
  auto it = by_action_.find({verb, noun});
  if (it == by_action_.end()) return {};
  return it->second;
}

void MixStats::merge(const MixStats& other) {
  attempted += other.attempted;
  replaced += other.replaced;
  for (const auto& [a, c] : other.per_action) {
    auto& mine = per_action[a];
    mine.first += c.first;
    mine.second += c.second;
  }
}

Window mix_window(const Window& window, const TargetPool& pool, int n, Rng& rng, MixStats* stats) {
  Window out = window;
  if (n <= 0 || window.size() <= 1) return out;
  const int center = window.center_index();
  std::vector<int> others;
  for (int i = 0; i < window.size(); ++i) {
    if (i != center) others.push_back(i);
  }
  for (auto pick : rng.sample_without_replacement(others.size(), static_cast<std::size_t>(n))) {
    auto& slot = out.slots[static_cast<std::size_t>(others[pick])];
    auto cands = pool.candidates(slot.verb, slot.noun);
    if (stats) {
      ++stats->attempted;
      ++stats->per_action[{slot.verb, slot.noun}].first;
    }
    if (cands.empty()) continue;
    slot.sample = cands[rng.below(cands.size())];
    slot.replaced = true;
    slot.padded = false;
    slot.effective_domain = Domain::kTarget;
    if (stats) {
      ++stats->replaced;
      ++stats->per_action[{slot.verb, slot.noun}].second;
    }
  }
  return out;
}

}  // namespace mixseq
