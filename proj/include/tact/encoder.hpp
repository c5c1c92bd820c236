#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tact/errors.hpp"

namespace tact {

enum class CellState : std::uint8_t { Unknown = 0, Free = 1, Contact = 2 };

struct CellIndex {
  int x = 0;
  int y = 0;
  bool operator==(const CellIndex&) const = default;
};

// Image levels for the three cell states plus the finger marker that is only
// drawn into the explorer's view.
inline constexpr double kImageUnknown = 0.5;
inline constexpr double kImageFree = 0.0;
inline constexpr double kImageContact = 1.0;
inline constexpr double kImageFinger = 0.75;

// Running map of everything the finger has learned about the workspace.
// Cells start Unknown and are overwritten by the latest probe result, so a
// noisy re-probe can flip a cell both ways.
class GridEncoder {
 public:
  GridEncoder() = default;
  GridEncoder(int width, int height) { reset(width, height); }

  void reset(int width, int height) {
    if (width <= 0 || height <= 0) throw ConfigError("GridEncoder: non-positive size");
    width_ = width;
    height_ = height;
    cells_.assign(static_cast<std::size_t>(width) * height, CellState::Unknown);
    explored_ = 0;
    contact_version_ = 0;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }

  CellState at(int x, int y) const { return cells_[index(x, y)]; }

  void mark(int x, int y, CellState state) {
    if (!in_bounds(x, y)) throw StateError("GridEncoder::mark: out of bounds");
    CellState& cell = cells_[index(x, y)];
    if (cell == state) return;
    if (cell == CellState::Unknown) ++explored_;
    if (cell == CellState::Contact || state == CellState::Contact) ++contact_version_;
    cell = state;
  }

  // Number of cells probed at least once.
  int explored_count() const { return explored_; }

  // Bumped whenever the set of contact cells changes; lets a reader cache
  // work keyed on the contact pattern.
  std::uint64_t contact_version() const { return contact_version_; }

  const std::vector<CellState>& cells() const { return cells_; }

  std::vector<CellIndex> contact_cells() const {
    std::vector<CellIndex> out;
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        if (at(x, y) == CellState::Contact) out.push_back({x, y});
      }
    }
    return out;
  }

  // Write the image row-major into `out` (size width*height). Unknown cells
  // read 0.5, free 0.0, contact 1.0; when a finger position is given its cell
  // is overdrawn at 0.75.
  template <typename T>
  void write_image(T* out, std::optional<CellIndex> finger = std::nullopt) const {
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      switch (cells_[i]) {
        case CellState::Unknown: out[i] = static_cast<T>(kImageUnknown); break;
        case CellState::Free: out[i] = static_cast<T>(kImageFree); break;
        case CellState::Contact: out[i] = static_cast<T>(kImageContact); break;
      }
    }
    if (finger) {
      if (!in_bounds(finger->x, finger->y)) throw StateError("write_image: finger out of bounds");
      out[index(finger->x, finger->y)] = static_cast<T>(kImageFinger);
    }
  }

  std::vector<double> image(std::optional<CellIndex> finger = std::nullopt) const {
    std::vector<double> out(cells_.size());
    write_image(out.data(), finger);
    return out;
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<CellState> cells_;
  int explored_ = 0;
  std::uint64_t contact_version_ = 0;
};

// Plain-text PGM (P2) with row 0 at the top of the file. Levels: free 0,
// unknown 128, finger 191, contact 255.
inline std::string render_pgm(const GridEncoder& enc,
                              std::optional<CellIndex> finger = std::nullopt) {
  std::ostringstream os;
  os << "P2\n" << enc.width() << ' ' << enc.height() << "\n255\n";
  for (int y = enc.height() - 1; y >= 0; --y) {
    for (int x = 0; x < enc.width(); ++x) {
      int level = 128;
      if (finger && finger->x == x && finger->y == y) {
        level = 191;
      } else {
        switch (enc.at(x, y)) {
          case CellState::Unknown: level = 128; break;
          case CellState::Free: level = 0; break;
          case CellState::Contact: level = 255; break;
        }
      }
      os << level;
      os << (x + 1 == enc.width() ? '\n' : ' ');
    }
  }
  return os.str();
}

}  // namespace tact
