#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tact/encoder.hpp"
#include "tact/errors.hpp"

namespace tact {

// One training example: a snapshot of the probed grid (cell states, finger
// position excluded) together with the identity of the object being probed.
struct LabeledSample {
  std::vector<CellState> cells;
  std::int32_t label = 0;
};

// Bounded FIFO over labeled grid snapshots. Once full, each push evicts the
// oldest sample; iteration order (operator[] with ascending index) is always
// oldest to newest.
class DataBuffer {
 public:
  explicit DataBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("DataBuffer: capacity must be >= 1");
  }

  void push(LabeledSample sample) {
    if (samples_.size() < capacity_) {
      samples_.push_back(std::move(sample));
    } else {
      samples_[head_] = std::move(sample);
      head_ = (head_ + 1) % capacity_;
    }
    ++total_pushes_;
  }

  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return samples_.empty(); }

  // Total number of pushes over the buffer's lifetime, including evicted ones.
  std::uint64_t total_pushes() const { return total_pushes_; }

  // i = 0 is the oldest sample currently held.
  const LabeledSample& operator[](std::size_t i) const {
    if (i >= samples_.size()) throw DataError("DataBuffer: index out of range");
    return samples_[(head_ + i) % samples_.size()];
  }

  std::vector<std::uint64_t> label_histogram(int num_labels) const {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(num_labels), 0);
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& s = samples_[i];
      if (s.label >= 0 && s.label < num_labels) ++counts[static_cast<std::size_t>(s.label)];
    }
    return counts;
  }

  void clear() {
    samples_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // index of the oldest sample once the ring is full
  std::uint64_t total_pushes_ = 0;
  std::vector<LabeledSample> samples_;
};

}  // namespace tact
