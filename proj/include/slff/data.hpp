#pragma once

// Windowed views over aligned panels. Windows are materialized per batch from
// (panel, end-row) references, so memory stays proportional to the panels.

#include "slff/model.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace slff {

struct SeriesPanel {
  Mat features;  // T x d
  Mat masks;     // T x d
  Mat targets;   // T x N, value at row t is the target for the window ending at t; NaN = unknown
  Vec base;      // T, reference level subtracted from targets (log p_t); zeros when unused
  std::vector<std::string> dates;  // optional, T entries

  Index length() const { return features.rows(); }
  void validate() const;
};

struct SampleRef {
  int panel = 0;
  Index end = 0;  // last row of the window
};

class WindowedData {
 public:
  WindowedData() = default;
  WindowedData(std::shared_ptr<const std::vector<SeriesPanel>> panels, std::vector<SampleRef> samples,
               int window);

  Index size() const { return static_cast<Index>(samples_.size()); }
  bool empty() const { return samples_.empty(); }
  int window() const { return window_; }
  Index num_features() const;
  Index num_horizons() const;

  SequenceBatch batch(std::span<const Index> idx) const;
  // Model-space targets: panel target minus base, N x B.
  Mat targets(std::span<const Index> idx) const;
  Vec base(std::span<const Index> idx) const;
  WindowTensor window_at(Index i) const;
  // Row date (or "t<row>"), suffixed with "@<panel>" when there are several panels.
  std::string label(Index i) const;

  const std::vector<SampleRef>& samples() const { return samples_; }
  const SeriesPanel& panel(int p) const { return (*panels_)[p]; }
  const std::shared_ptr<const std::vector<SeriesPanel>>& panels() const { return panels_; }
  WindowedData subset(std::span<const Index> idx) const;

 private:
  std::shared_ptr<const std::vector<SeriesPanel>> panels_;
  std::vector<SampleRef> samples_;
  int window_ = 0;
};

// Every window end whose full look-back lies in [first_row, last_row] of its
// panel and whose targets are all finite.
std::vector<SampleRef> window_samples(const std::vector<SeriesPanel>& panels, int window,
                                      const std::vector<int>& panel_ids, Index first_row = 0,
                                      Index last_row = -1);

std::vector<Index> iota_indices(Index n);

}  // namespace slff
