#pragma once

#include <span>
#include <vector>

namespace san {

struct SlotOffset {
  int dy = 0;
  int dx = 0;
  bool operator==(const SlotOffset&) const = default;
};

// Local square neighbourhood R(i) gathered around every output location.
// Stride is always 1 and padding (k-1)/2, so spatial extent is preserved.
// Slots are enumerated row-major over the window unless deliberately
// permuted; every operator consumes slots in this order.
class FootprintSpec {
 public:
  static constexpr int kMaxSize = 11;

  explicit FootprintSpec(int k);

  int k() const { return k_; }
  int slots() const { return static_cast<int>(offsets_.size()); }
  int pad() const { return (k_ - 1) / 2; }
  int stride() const { return 1; }
  std::span<const SlotOffset> offsets() const { return offsets_; }

  // Same window with slot s of the result taken from slot perm[s] of this one.
  FootprintSpec permuted(std::span<const int> perm) const;

  bool operator==(const FootprintSpec&) const = default;

 private:
  int k_;
  std::vector<SlotOffset> offsets_;
};

}  // namespace san
