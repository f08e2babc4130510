#include "ctn/autograd.hpp"

#include <atomic>

namespace ctn {

namespace {

thread_local Record* g_active = nullptr;
std::atomic<std::uint64_t> g_next_record_id{1};

}  // namespace

Record::Record() : id_(g_next_record_id.fetch_add(1)) {}

void Record::push(std::string op, std::vector<Tensor> inputs, Tensor& output, std::function<void()> backward) {
  auto* impl = output.impl();
  impl->requires_grad = true;
  impl->producer = static_cast<std::int64_t>(entries_.size());
  impl->record_id = id_;
  entries_.push_back(Entry{std::move(op), std::move(inputs), output, std::move(backward)});
}

void Record::backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorCode::NonScalarLoss,
          "backward() needs a scalar loss, got " + (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;  // constant loss: every leaf keeps a zero gradient
  const auto* loss_impl = loss.impl();
  require(loss_impl->record_id == id_ && loss_impl->producer >= 0, ErrorCode::InvalidArgument,
          "loss was not produced by this record");

  for (auto& e : entries_) {
    // Each input must be a leaf or come from an earlier entry of this record.
    for (const auto& in : e.inputs) {
      const auto* in_impl = in.impl();
      if (in_impl->record_id == id_ && in_impl->producer >= e.output.impl()->producer)
        fail(ErrorCode::CyclicRecord, "entry '" + e.op + "' consumes a tensor produced at or after itself");
    }
  }

  Tensor seed = loss;
  dispatch(loss.dtype(), [&]<class T>() { seed.grad_values<T>()[0] += T(1); });

  const auto last = static_cast<std::size_t>(loss_impl->producer);
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& e = entries_[i];
    if (!e.output.has_grad()) continue;  // not on a path to the loss
    e.backward();
  }
}

void Record::clear() { entries_.clear(); }

RecordScope::RecordScope(Record& record) : previous_(g_active) { g_active = &record; }

RecordScope::~RecordScope() { g_active = previous_; }

Record* active_record() noexcept { return g_active; }

bool should_record(std::initializer_list<const Tensor*> inputs) noexcept {
  if (g_active == nullptr) return false;
  for (const auto* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace ctn
