#include "fo3d/feature_map.hpp"

#include "fo3d/errors.hpp"

namespace fo3d {

Tensor FeatureMap::to_tensor() const {
  return Tensor::from<float>({static_cast<std::size_t>(height), static_cast<std::size_t>(width),
                              static_cast<std::size_t>(channels)},
                             data);
}

FeatureMap FeatureMap::from_tensor(const Tensor& t) {
  if (t.dtype() != DType::kF32 || t.rank() != 3) {
    throw FormatError("feature map must be an f32 tensor of shape [H, W, C]");
  }
  FeatureMap m;
  m.height = static_cast<int>(t.dim(0));
  m.width = static_cast<int>(t.dim(1));
  m.channels = static_cast<int>(t.dim(2));
  const auto v = t.values<float>();
  m.data.assign(v.begin(), v.end());
  return m;
}

}  // namespace fo3d
