#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "fuxib/tensor.hpp"

namespace fuxib {

// Named learnable arrays with paired gradient buffers. Iteration follows
// insertion order so optimizer sweeps and serialization are deterministic.
template <class Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat<Real> value;
    Mat<Real> grad;
    bool trainable = true;
  };

  int add(const std::string& name, Mat<Real> value, bool trainable = true) {
    if (index_.count(name)) throw config_error("duplicate parameter: " + name);
    Entry e;
    e.name = name;
    e.grad = Mat<Real>(value.rows(), value.cols());
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    int id = static_cast<int>(entries_.size()) - 1;
    index_[name] = id;
    return id;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("unknown parameter: " + name);
    return it->second;
  }

  Entry& at(int id) { return entries_[static_cast<std::size_t>(id)]; }
  const Entry& at(int id) const { return entries_[static_cast<std::size_t>(id)]; }

  Entry& at(const std::string& name) { return entries_[static_cast<std::size_t>(id_of(name))]; }
  const Entry& at(const std::string& name) const {
    return entries_[static_cast<std::size_t>(id_of(name))];
  }

  Mat<Real>& value(const std::string& name) { return at(name).value; }
  Mat<Real>& grad(const std::string& name) { return at(name).grad; }

  std::size_t count() const { return entries_.size(); }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(Real(0));
  }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (!trainable_only || e.trainable) n += e.value.size();
    return n;
  }

  // fingerprint of all values, for purity checks
  std::uint64_t value_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : entries_) {
      h = fnv1a64(e.name.data(), e.name.size(), h);
      h = fnv1a64(e.value.data().data(), e.value.size() * sizeof(Real), h);
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

using ParamStored = ParamStore<double>;

}  // namespace fuxib
