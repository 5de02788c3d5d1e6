#pragma once

#include <algorithm>
#include <numeric>

namespace civkit {

template <class Scalar>
std::vector<int> sort_order(const VectorX<Scalar>& means) {
  std::vector<int> order(static_cast<size_t>(means.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return means[a] < means[b]; });
  return order;
}

}  // namespace civkit
