#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sgg/errors.hpp"
#include "sgg/geometry.hpp"
#include "sgg/tensor.hpp"

namespace sgg {

// Bilinear ROI pooling: one sample at each bin center of an out_size grid.
// `box` is in image coordinates and is clamped to the image before scaling
// into feature coordinates; a box entirely outside the image is an error.
// Pixel centers sit at integer index + 0.5, so bilinear interpolation is
// exact for maps that are affine in the pixel-center coordinates, and a box
// aligned to an integer region reads back exact pixel values.
inline Tensor roi_align(const Tensor& map, const Box& box, double scale,
                        int image_size, int out_size = 5) {
  if (map.ndim() != 3)
    throw ShapeError("roi_align: expected C x H x W map, got " +
                     dims_str(map.dims()));
  const double S = image_size;
  double x1 = std::clamp(box.x1, 0.0, S), x2 = std::clamp(box.x2, 0.0, S);
  double y1 = std::clamp(box.y1, 0.0, S), y2 = std::clamp(box.y2, 0.0, S);
  if (!(x2 > x1 && y2 > y1))
    throw GeometryError("roi_align: box (" + std::to_string(box.x1) + "," +
                        std::to_string(box.y1) + "," + std::to_string(box.x2) +
                        "," + std::to_string(box.y2) + ") outside the image");

  const int C = map.dims()[0], H = map.dims()[1], W = map.dims()[2];
  const int G = out_size;
  const double fx1 = x1 * scale, fx2 = x2 * scale;
  const double fy1 = y1 * scale, fy2 = y2 * scale;
  const double bw = (fx2 - fx1) / G, bh = (fy2 - fy1) / G;

  // Sample positions and bilinear corner weights, reused by backward.
  struct Sample {
    int x0, y0;
    double wx, wy;  // weight of the (x0+1, y0+1) side
  };
  std::vector<Sample> samples(static_cast<std::size_t>(G) * G);
  for (int gy = 0; gy < G; ++gy)
    for (int gx = 0; gx < G; ++gx) {
      double u = fx1 + (gx + 0.5) * bw - 0.5;
      double v = fy1 + (gy + 0.5) * bh - 0.5;
      u = std::clamp(u, 0.0, static_cast<double>(W - 1));
      v = std::clamp(v, 0.0, static_cast<double>(H - 1));
      int x0 = std::min(static_cast<int>(u), W - 2 >= 0 ? W - 2 : 0);
      int y0 = std::min(static_cast<int>(v), H - 2 >= 0 ? H - 2 : 0);
      if (W == 1) x0 = 0;
      if (H == 1) y0 = 0;
      samples[gy * G + gx] = {x0, y0, u - x0, v - y0};
    }

  std::vector<real> out(static_cast<std::size_t>(C) * G * G);
  const auto& mv = map.vals();
  for (int c = 0; c < C; ++c) {
    const real* mc = mv.data() + static_cast<std::size_t>(c) * H * W;
    for (int t = 0; t < G * G; ++t) {
      const Sample& s = samples[t];
      const int x1i = std::min(s.x0 + 1, W - 1), y1i = std::min(s.y0 + 1, H - 1);
      const real a = mc[s.y0 * W + s.x0], b = mc[s.y0 * W + x1i];
      const real d = mc[y1i * W + s.x0], e = mc[y1i * W + x1i];
      out[c * G * G + t] =
          static_cast<real>((1 - s.wy) * ((1 - s.wx) * a + s.wx * b) +
                            s.wy * ((1 - s.wx) * d + s.wx * e));
    }
  }

  auto mn = map.node_ptr();
  return make_op({C, G, G}, std::move(out), {map},
                 [mn, samples, C, H, W, G](TensorNode& n) {
                   for (int c = 0; c < C; ++c) {
                     real* mg = mn->grad.data() + static_cast<std::size_t>(c) * H * W;
                     for (int t = 0; t < G * G; ++t) {
                       const Sample& s = samples[t];
                       const real g = n.grad[c * G * G + t];
                       if (g == 0) continue;
                       const int x1i = std::min(s.x0 + 1, W - 1);
                       const int y1i = std::min(s.y0 + 1, H - 1);
                       mg[s.y0 * W + s.x0] += g * static_cast<real>((1 - s.wy) * (1 - s.wx));
                       mg[s.y0 * W + x1i] += g * static_cast<real>((1 - s.wy) * s.wx);
                       mg[y1i * W + s.x0] += g * static_cast<real>(s.wy * (1 - s.wx));
                       mg[y1i * W + x1i] += g * static_cast<real>(s.wy * s.wx);
                     }
                   }
                 });
}

// Trainable stand-in backbone: three 3x3 conv layers with two stride-2
// average poolings, so the shared map is 1/4 of the input resolution.
class Stem {
 public:
  Stem(int in_channels, int c1, int c2, int out_channels, int image_size,
       std::mt19937_64& rng)
      : image_size_(image_size), in_channels_(in_channels) {
    w1_ = Parameter("stem.conv1.w",
                    uniform_init({c1, in_channels, 3, 3}, in_channels * 9, rng));
    b1_ = Parameter("stem.conv1.b", Tensor::zeros({c1}, true));
    w2_ = Parameter("stem.conv2.w", uniform_init({c2, c1, 3, 3}, c1 * 9, rng));
    b2_ = Parameter("stem.conv2.b", Tensor::zeros({c2}, true));
    w3_ = Parameter("stem.conv3.w",
                    uniform_init({out_channels, c2, 3, 3}, c2 * 9, rng));
    b3_ = Parameter("stem.conv3.b", Tensor::zeros({out_channels}, true));
  }

  Tensor forward(const Tensor& image) const {
    if (image.ndim() != 3 || image.dims()[0] != in_channels_ ||
        image.dims()[1] != image_size_ || image.dims()[2] != image_size_)
      throw ShapeError("stem: image " + dims_str(image.dims()) +
                       " does not match configured resolution " +
                       std::to_string(image_size_));
    Tensor h = relu(conv2d(image, w1_.tensor, b1_.tensor, 1));
    h = avg_pool2d(h, 2, 2);
    h = relu(conv2d(h, w2_.tensor, b2_.tensor, 1));
    h = avg_pool2d(h, 2, 2);
    return relu(conv2d(h, w3_.tensor, b3_.tensor, 1));
  }

  // Image-to-feature coordinate factor of the two stride-2 reductions.
  double scale() const { return 0.25; }
  int image_size() const { return image_size_; }

  std::vector<Parameter*> params() {
    return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
  }

  void set_lr_multiplier(real mult) {
    for (Parameter* p : params()) p->lr_multiplier = mult;
  }

 private:
  int image_size_;
  int in_channels_;
  Parameter w1_, b1_, w2_, b2_, w3_, b3_;
};

// Pooled object features to a D-dim vector: flatten -> FC -> ReLU -> FC.
class ObjectTransform {
 public:
  ObjectTransform(int in_channels, int pool_size, int dim, std::mt19937_64& rng) {
    const int flat = in_channels * pool_size * pool_size;
    w1_ = Parameter("object_tf.fc1.w", uniform_init({dim, flat}, flat, rng));
    b1_ = Parameter("object_tf.fc1.b", Tensor::zeros({dim}, true));
    w2_ = Parameter("object_tf.fc2.w", uniform_init({dim, dim}, dim, rng));
    b2_ = Parameter("object_tf.fc2.b", Tensor::zeros({dim}, true));
  }

  Tensor forward(const Tensor& pooled) const {
    Tensor h = linear(flatten(pooled), w1_.tensor, b1_.tensor);
    return linear(relu(h), w2_.tensor, b2_.tensor);
  }

  std::vector<Parameter*> params() { return {&w1_, &b1_, &w2_, &b2_}; }

 private:
  Parameter w1_, b1_, w2_, b2_;
};

// Pooled subgraph features to a D x 5 x 5 map: two padded 3x3 convolutions
// with an interleaved ReLU; the stacked receptive field covers the whole map.
class SubgraphTransform {
 public:
  SubgraphTransform(int in_channels, int dim, std::mt19937_64& rng) {
    k1_ = Parameter("subgraph_tf.conv1.w",
                    uniform_init({dim, in_channels, 3, 3}, in_channels * 9, rng));
    b1_ = Parameter("subgraph_tf.conv1.b", Tensor::zeros({dim}, true));
    k2_ = Parameter("subgraph_tf.conv2.w", uniform_init({dim, dim, 3, 3}, dim * 9, rng));
    b2_ = Parameter("subgraph_tf.conv2.b", Tensor::zeros({dim}, true));
  }

  Tensor forward(const Tensor& pooled) const {
    Tensor h = relu(conv2d(pooled, k1_.tensor, b1_.tensor, 1));
    return conv2d(h, k2_.tensor, b2_.tensor, 1);
  }

  std::vector<Parameter*> params() { return {&k1_, &b1_, &k2_, &b2_}; }

 private:
  Parameter k1_, b1_, k2_, b2_;
};

}  // namespace sgg
