#pragma once

#include <omp.h>

#include <algorithm>
#include <vector>

namespace upil::kernels {

namespace detail {
inline constexpr std::uint64_t kMaskChunk = 1024;

template <typename ScoreFn>
MaskArgmax scan_masks(std::uint64_t begin, std::uint64_t end, ScoreFn& score) {
  MaskArgmax best{begin, score(begin)};
  for (std::uint64_t mask = begin + 1; mask < end; ++mask) {
    const double s = score(mask);
    if (s > best.score) best = {mask, s};
  }
  return best;
}
}  // namespace detail

template <typename ScoreFn>
MaskArgmax argmax_over_masks(std::uint64_t count, ScoreFn&& score) {
  const std::uint64_t chunks = (count + detail::kMaskChunk - 1) / detail::kMaskChunk;
  std::vector<MaskArgmax> partial(chunks);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t c = 0; c < static_cast<std::int64_t>(chunks); ++c) {
    const std::uint64_t begin = static_cast<std::uint64_t>(c) * detail::kMaskChunk;
    const std::uint64_t end = std::min(count, begin + detail::kMaskChunk);
    partial[c] = detail::scan_masks(begin, end, score);
  }
  // Chunk order reduction with strict '>' keeps the earliest maximiser.
  MaskArgmax best = partial.front();
  for (std::size_t c = 1; c < partial.size(); ++c)
    if (partial[c].score > best.score) best = partial[c];
  return best;
}

namespace serial {
template <typename ScoreFn>
MaskArgmax argmax_over_masks(std::uint64_t count, ScoreFn&& score) {
  return detail::scan_masks(0, count, score);
}
}  // namespace serial

}  // namespace upil::kernels
