#include "glfeat/tensor.hpp"

#include <numeric>

namespace glfeat {

std::size_t ParamSpec::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

int ParamLayout::add(std::string name, std::vector<int> shape) {
  specs_.push_back({std::move(name), std::move(shape)});
  return static_cast<int>(specs_.size()) - 1;
}

std::size_t ParamLayout::scalar_count() const {
  std::size_t n = 0;
  for (const auto& s : specs_) n += s.count();
  return n;
}

}  // namespace glfeat
