#include "san/footprint.hpp"

#include <string>

#include "san/errors.hpp"

namespace san {

FootprintSpec::FootprintSpec(int k) : k_(k) {
  if (k < 1 || k % 2 == 0 || k > kMaxSize) {
    throw ConfigError("footprint size must be odd and in [1, " + std::to_string(kMaxSize) +
                      "], got " + std::to_string(k));
  }
  const int r = pad();
  offsets_.reserve(static_cast<std::size_t>(k * k));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) offsets_.push_back({dy, dx});
  }
}

FootprintSpec FootprintSpec::permuted(std::span<const int> perm) const {
  if (static_cast<int>(perm.size()) != slots()) {
    throw ConfigError("footprint permutation has " + std::to_string(perm.size()) +
                      " entries, expected " + std::to_string(slots()));
  }
  std::vector<bool> seen(perm.size(), false);
  FootprintSpec out = *this;
  for (std::size_t s = 0; s < perm.size(); ++s) {
    const int from = perm[s];
    if (from < 0 || from >= slots() || seen[static_cast<std::size_t>(from)]) {
      throw ConfigError("footprint permutation is not a bijection");
    }
    seen[static_cast<std::size_t>(from)] = true;
    out.offsets_[s] = offsets_[static_cast<std::size_t>(from)];
  }
  return out;
}

}  // namespace san
