#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctn/tensor.hpp"

namespace ctn {

/// Ordered log of primitive ops executed while the record is active.
///
/// Ops append themselves in execution order, so the log is a topological
/// order of the computation. backward() walks it in reverse and each entry
/// pushes its output gradient into whichever inputs require a gradient.
/// Leaf gradients accumulate across backward calls until zero_grad().
class Record {
 public:
  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Record();
  Record(const Record&) = delete;
  Record& operator=(const Record&) = delete;

  /// Appends an entry and marks `output` as produced by it.
  void push(std::string op, std::vector<Tensor> inputs, Tensor& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates through every recorded entry.
  void backward(const Tensor& loss);

  /// Drops every entry (and with them the intermediates they keep alive).
  void clear();

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::uint64_t id() const noexcept { return id_; }

 private:
  std::vector<Entry> entries_;
  std::uint64_t id_;
};

/// Activates a record for the current thread for the lifetime of the scope.
class RecordScope {
 public:
  explicit RecordScope(Record& record);
  ~RecordScope();
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

 private:
  Record* previous_;
};

Record* active_record() noexcept;

/// True when an op over `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs) noexcept;

}  // namespace ctn
