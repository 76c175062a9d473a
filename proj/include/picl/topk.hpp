#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "picl/common.hpp"

namespace picl {

/// Bounded selection of the k best (score, id) pairs: higher score first,
/// ties by ascending id.
template <typename Score>
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

  static bool better(const std::pair<Score, ParagraphId>& a, const std::pair<Score, ParagraphId>& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  }

  void push(Score score, ParagraphId id) {
    if (k_ == 0) return;
    std::pair<Score, ParagraphId> item{score, id};
    if (heap_.size() < k_) {
      heap_.push_back(item);
      std::push_heap(heap_.begin(), heap_.end(), better);
    } else if (better(item, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.back() = item;
      std::push_heap(heap_.begin(), heap_.end(), better);
    }
  }

  /// Best first.
  std::vector<std::pair<Score, ParagraphId>> take() {
    std::sort(heap_.begin(), heap_.end(), better);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<std::pair<Score, ParagraphId>> heap_;  // worst on top
};

}  // namespace picl
