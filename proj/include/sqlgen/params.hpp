#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqlgen/error.hpp"
#include "sqlgen/numeric.hpp"

namespace sqlgen {

struct Block {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Ordered, immutable description of named parameter blocks over one flat buffer.
class Layout {
 public:
  Layout() = default;

  void add(std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    blocks_.push_back(Block{std::move(name), std::move(shape), total_, n});
    total_ += n;
  }

  const Block& block(std::string_view name) const {
    for (const Block& b : blocks_) {
      if (b.name == name) return b;
    }
    fail(ErrorKind::invalid_argument, "no parameter block named " + std::string(name));
  }

  bool has(std::string_view name) const {
    for (const Block& b : blocks_) {
      if (b.name == name) return true;
    }
    return false;
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }

  bool operator==(const Layout& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (blocks_[i].name != other.blocks_[i].name || blocks_[i].shape != other.blocks_[i].shape) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Block> blocks_;
  std::size_t total_ = 0;
};

/// Named arrays of reals sharing one layout. The tag keeps parameters and
/// gradients from being mixed up at compile time.
template <class Tag>
class NamedArrays {
 public:
  NamedArrays() : layout_(std::make_shared<Layout>()) {}
  explicit NamedArrays(std::shared_ptr<const Layout> layout)
      : layout_(std::move(layout)), values_(layout_->total(), 0.0) {}

  template <class OtherTag>
  static NamedArrays zeros_like(const NamedArrays<OtherTag>& other) {
    return NamedArrays(other.layout_ptr());
  }

  const Layout& layout() const { return *layout_; }
  const std::shared_ptr<const Layout>& layout_ptr() const { return layout_; }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  std::size_t total_count() const { return values_.size(); }

  std::span<double> operator[](std::string_view name) {
    const Block& b = layout_->block(name);
    return std::span<double>(values_).subspan(b.offset, b.size);
  }
  std::span<const double> operator[](std::string_view name) const {
    const Block& b = layout_->block(name);
    return std::span<const double>(values_).subspan(b.offset, b.size);
  }

  template <class OtherTag>
  bool congruent(const NamedArrays<OtherTag>& other) const {
    return layout() == other.layout();
  }

  bool finite() const { return all_finite(values_); }

  bool operator==(const NamedArrays& other) const {
    return congruent(other) && values_ == other.values_;
  }

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

struct ParamTag {};
struct GradTag {};

using ParamVector = NamedArrays<ParamTag>;
using GradVector = NamedArrays<GradTag>;

/// Read-only view of parameters in an arbitrary scalar type; the model and
/// the losses are written once against this and run on doubles or tape vars.
template <class S>
class ParamView {
 public:
  ParamView(const Layout& layout, std::span<const S> values) : layout_(&layout), values_(values) {}

  std::span<const S> operator[](std::string_view name) const {
    const Block& b = layout_->block(name);
    return values_.subspan(b.offset, b.size);
  }

  const Layout& layout() const { return *layout_; }

 private:
  const Layout* layout_;
  std::span<const S> values_;
};

inline ParamView<double> view(const ParamVector& params) {
  return ParamView<double>(params.layout(), params.flat());
}

}  // namespace sqlgen
