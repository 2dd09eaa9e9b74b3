#include "slff/data.hpp"

#include <cmath>
#include <numeric>

namespace slff {

void SeriesPanel::validate() const {
  require_shape(masks.rows() == features.rows() && masks.cols() == features.cols(),
                "panel: mask shape must match features");
  require_shape(targets.rows() == features.rows(), "panel: one target row per time step");
  require_shape(base.size() == features.rows(), "panel: one base value per time step");
  require_shape(dates.empty() || static_cast<Index>(dates.size()) == features.rows(),
                "panel: one date per time step");
  if (!features.allFinite()) throw DataError("panel: non-finite feature value");
}

WindowedData::WindowedData(std::shared_ptr<const std::vector<SeriesPanel>> panels,
                           std::vector<SampleRef> samples, int window)
    : panels_(std::move(panels)), samples_(std::move(samples)), window_(window) {
  if (window_ < 1) throw InvalidArgument("windowed data: window must be positive");
  for (const auto& s : samples_) {
    if (s.panel < 0 || s.panel >= static_cast<int>(panels_->size()))
      throw InvalidArgument("windowed data: panel index out of range");
    if (s.end < window_ - 1 || s.end >= (*panels_)[s.panel].length())
      throw InvalidArgument("windowed data: window does not fit in its panel");
  }
}

Index WindowedData::num_features() const { return panels_ && !panels_->empty() ? panels_->front().features.cols() : 0; }
Index WindowedData::num_horizons() const { return panels_ && !panels_->empty() ? panels_->front().targets.cols() : 0; }

SequenceBatch WindowedData::batch(std::span<const Index> idx) const {
  const Index d = num_features();
  const Index B = static_cast<Index>(idx.size());
  SequenceBatch out;
  out.steps.assign(window_, Mat(2 * d, B));
  for (Index j = 0; j < B; ++j) {
    const SampleRef& s = samples_[idx[j]];
    const SeriesPanel& p = (*panels_)[s.panel];
    const Index start = s.end - window_ + 1;
    for (int t = 0; t < window_; ++t) {
      out.steps[t].col(j).head(d) = p.features.row(start + t).transpose();
      out.steps[t].col(j).tail(d) = p.masks.row(start + t).transpose();
    }
  }
  return out;
}

Mat WindowedData::targets(std::span<const Index> idx) const {
  Mat y(num_horizons(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const SampleRef& s = samples_[idx[j]];
    const SeriesPanel& p = (*panels_)[s.panel];
    y.col(j) = p.targets.row(s.end).transpose().array() - p.base[s.end];
  }
  return y;
}

Vec WindowedData::base(std::span<const Index> idx) const {
  Vec b(static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const SampleRef& s = samples_[idx[j]];
    b[j] = (*panels_)[s.panel].base[s.end];
  }
  return b;
}

WindowTensor WindowedData::window_at(Index i) const {
  const SampleRef& s = samples_[i];
  const SeriesPanel& p = (*panels_)[s.panel];
  const Index start = s.end - window_ + 1;
  WindowTensor w{p.features.middleRows(start, window_), p.masks.middleRows(start, window_),
                 p.dates.empty() ? std::string() : p.dates[s.end]};
  return w;
}

std::string WindowedData::label(Index i) const {
  const SampleRef& s = samples_[i];
  const SeriesPanel& p = (*panels_)[s.panel];
  std::string l = p.dates.empty() ? "t" + std::to_string(s.end) : p.dates[s.end];
  if (panels_->size() > 1) l += "@" + std::to_string(s.panel);
  return l;
}

WindowedData WindowedData::subset(std::span<const Index> idx) const {
  std::vector<SampleRef> s;
  s.reserve(idx.size());
  for (Index i : idx) s.push_back(samples_[i]);
  return WindowedData(panels_, std::move(s), window_);
}

std::vector<SampleRef> window_samples(const std::vector<SeriesPanel>& panels, int window,
                                      const std::vector<int>& panel_ids, Index first_row, Index last_row) {
  std::vector<SampleRef> out;
  for (int p : panel_ids) {
    const SeriesPanel& sp = panels.at(p);
    const Index last = last_row < 0 ? sp.length() - 1 : std::min(last_row, sp.length() - 1);
    for (Index end = std::max<Index>(first_row + window - 1, window - 1); end <= last; ++end) {
      if (sp.targets.row(end).allFinite()) out.push_back({p, end});
    }
  }
  return out;
}

std::vector<Index> iota_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

}  // namespace slff
