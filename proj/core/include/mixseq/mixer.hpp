#pragma once

#include <map>
#include <span>
#include <vector>

#include "mixseq/corpus.hpp"
#include "mixseq/rng.hpp"
#include "mixseq/types.hpp"

namespace mixseq {

// One position of a window. `sample` points into a Dataset that must outlive
// the window. Labels are -1 when unknown (unlabeled target windows).
struct WindowSlot {
  const ActionSample* sample = nullptr;
  int verb = -1;
  int noun = -1;
  bool replaced = false;
  bool padded = false;  // edge copy of the first or last action of the video
  Domain effective_domain = Domain::kSource;
};

// w consecutive actions of one video centred on the prediction target.
struct Window {
  std::vector<WindowSlot> slots;

  int size() const { return static_cast<int>(slots.size()); }
  int center_index() const { return (size() - 1) / 2; }
  const WindowSlot& center() const { return slots[static_cast<std::size_t>(center_index())]; }
  bool labeled() const;
};

// One window per action, in video order then temporal order. Positions that
// fall outside the video repeat the first/last action. Throws ConfigError for
// even or non-positive w and DataError for an empty dataset.
std::vector<Window> build_windows(const Dataset& dataset, int w);

// Pseudo-labeled target samples grouped by their pseudo (verb, noun).
class TargetPool {
 public:
  TargetPool() = default;
  // Labels whose sample_id is not in `target` raise DataError.
  TargetPool(const Dataset& target, std::span<const PseudoLabel> labels);

  std::span<const ActionSample* const> candidates(int verb, int noun) const;
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

 private:
  std::map<Action, std::vector<const ActionSample*>> by_action_;
  std::size_t size_ = 0;
};

// Replacement counters; per-action entries hold (attempted, replaced).
struct MixStats {
  long attempted = 0;
  long replaced = 0;
  std::map<Action, std::pair<long, long>> per_action;

  long missed() const { return attempted - replaced; }
  void merge(const MixStats& other);
};

// Picks `n` distinct non-central positions uniformly and swaps each for a
// uniformly drawn pool sample whose pseudo-labels equal the slot's labels.
// Positions without a matching candidate stay unchanged.
Window mix_window(const Window& window, const TargetPool& pool, int n, Rng& rng,
                  MixStats* stats = nullptr);

}  // namespace mixseq
