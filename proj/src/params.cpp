#include "wavjepa/params.hpp"

#include "wavjepa/errors.hpp"

namespace wavjepa {

Slot ParamLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay) {
  if (rows <= 0 || cols <= 0) {
    throw InvalidArgument("parameter '" + name + "' has an empty shape");
  }
  Slot slot{size_, rows, cols};
  size_ += slot.size();
  entries_.push_back({std::move(name), slot, decay});
  return slot;
}

std::vector<double> ParamLayout::decay_mask() const {
  std::vector<double> mask(size_, 0.0);
  for (const auto& e : entries_) {
    if (!e.decay) continue;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(e.slot.offset), e.slot.size(), 1.0);
  }
  return mask;
}

}  // namespace wavjepa
