/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/intermittent.hpp"

#include <algorithm>
#include <cmath>

#include "nexume/errors.hpp"
#include "nexume/util.hpp"

namespace nexume::intermittent {

namespace {

void set_cursor(Quanta& q, uint64_t inner_width) {
  uint64_t w = inner_width == 0 ? 1 : inner_width;
  q.outer = static_cast<uint32_t>(q.start_iter / w);
  q.inner = static_cast<uint32_t>(q.start_iter % w);
}

int64_t overflow_free_mul(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw AccumulatorOverflow("intermittent kernel accumulator overflowed");
  }
  return r;
}

int64_t overflow_free_add(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_add_overflow(a, b, &r)) {
    throw AccumulatorOverflow("intermittent kernel accumulator overflowed");
  }
  return r;
}

int32_t requantize_acc(int64_t acc, const kernels::QFormat& a, const kernels::QFormat& b,
                       const kernels::QFormat& out) {
  double real = static_cast<double>(acc) * a.step() * b.step();
  double scaled = round_half_even(real / out.scale * static_cast<double>(out.qmax()));
  double clamped = std::clamp(scaled, -static_cast<double>(out.qmax()),
                              static_cast<double>(out.qmax()));
  return static_cast<int32_t>(clamped);
}

// Computes output element `idx` of the task into `out`. Integer-only, so the
// result is bit-identical no matter how execution is sliced.
void execute_iteration(const KernelTask& task, uint64_t idx, kernels::FixedTensor& out) {
  if (const auto* g = std::get_if<GemmTask>(&task)) {
    size_t n = g->b.shape[1];
    size_t k = g->a.shape[1];
    size_t i = idx / n;
    size_t j = idx % n;
    int64_t acc = 0;
    for (size_t p = 0; p < k; ++p) {
      acc = overflow_free_add(
          acc, overflow_free_mul(g->a.codes[i * k + p], g->b.codes[p * n + j]));
    }
    out.codes[idx] = requantize_acc(acc, g->a.fmt, g->b.fmt, g->out_fmt);
    return;
  }
  const auto& c = std::get<Conv2dTask>(task);
  size_t kh = c.k.shape[0], kw = c.k.shape[1];
  size_t out_w = c.x.shape[1] - kw + 1;
  size_t i = idx / out_w;
  size_t j = idx % out_w;
  int64_t acc = 0;
  for (size_t a = 0; a < kh; ++a) {
    for (size_t b = 0; b < kw; ++b) {
      acc = overflow_free_add(acc, overflow_free_mul(c.x.at(i + a, j + b), c.k.at(a, b)));
    }
  }
  out.codes[idx] = requantize_acc(acc, c.x.fmt, c.k.fmt, c.out_fmt);
}

kernels::FixedTensor task_output_template(const KernelTask& task) {
  kernels::FixedTensor out;
  if (const auto* g = std::get_if<GemmTask>(&task)) {
    out.shape = {g->a.shape[0], g->b.shape[1]};
    out.fmt = g->out_fmt;
  } else {
    const auto& c = std::get<Conv2dTask>(task);
    out.shape = {c.x.shape[0] - c.k.shape[0] + 1, c.x.shape[1] - c.k.shape[1] + 1};
    out.fmt = c.out_fmt;
  }
  out.codes.assign(shape_size(out.shape), 0);
  return out;
}

struct EngineHooks {
  // Commit iterations [start, start+l) to the volatile output.
  std::function<void(uint64_t start, uint64_t l)> commit;
  std::function<kernels::FixedTensor()> snapshot;
  std::function<void(const kernels::FixedTensor&)> restore;
};

RunResult run_core(const QuantaPlan& plan, devmodel::KernelKind kind,
                   uint64_t macs_per_iter, uint64_t inner_width,
                   const ehsim::CapacitorState& capacitor, const ehsim::EnergyTrace& trace,
                   const devmodel::HardwareProfile& profile, const RunOptions& options,
                   const EngineHooks& hooks, double start_t_s) {
  RunResult result;
  ehsim::CapacitorState state = capacitor;
  ExecutionLog& log = result.log;
  log.initial_usable_nj = state.energy_nj;

  double t = start_t_s;
  uint32_t pos = 0;
  uint64_t next_iter = 0;
  if (options.resume_from) {
    std::vector<uint32_t> cursor;
    kernels::FixedTensor partial;
    load_state(*options.resume_from, cursor, partial, pos);
    hooks.restore(partial);
    next_iter = (pos < plan.quanta.size()) ? plan.quanta[pos].start_iter
                                           : plan.total_iterations();
  }

  auto make_cursor = [&](uint64_t iter) {
    uint64_t w = inner_width == 0 ? 1 : inner_width;
    return std::vector<uint32_t>{static_cast<uint32_t>(iter / w),
                                 static_cast<uint32_t>(iter % w)};
  };

  // The non-volatile checkpoint slot, always kept as serialized bytes so
  // every run exercises the snapshot format.
  std::vector<uint8_t> nv_slot =
      serialize_checkpoint(save_state(make_cursor(next_iter), hooks.snapshot(), pos));

  const double t_mac_ns = profile.t_per_mac(kind);
  const double restore_uj = profile.e_restore_nj / 1000.0;
  const double interval = trace.sample_interval_s;

  auto account = [&](const ehsim::StepResult& sr) {
    log.harvested_nj += sr.harvested_nj;
    log.debited_nj += sr.debited_nj;
    state = sr.state;
  };

  uint64_t exec_count = 0;
  double waited_s = 0.0;
  bool dead = false;

  auto injected = [&](uint64_t index, bool mid) {
    for (const auto& f : options.failures) {
      if (f.exec_index == index && f.mid_quanta == mid) return true;
    }
    return false;
  };

  while (pos < plan.quanta.size()) {
    const Quanta& q = plan.quanta[pos];
    double need_uj = q.e_uj + (dead ? restore_uj : 0.0);
    if (ehsim::usable_energy_uj(state) < need_uj) {
      auto sr = ehsim::step(state, trace, t, interval, 0.0);
      account(sr);
      t += interval;
      waited_s += interval;
      log.events.push_back({t, EventKind::wait, 0, pos});
      if (waited_s > options.max_wait_s) {
        throw Starvation("no usable energy after " + std::to_string(waited_s) +
                         " s of simulated waiting");
      }
      continue;
    }
    waited_s = 0.0;

    if (dead) {
      // Reboot: debit the restore cost over one trace tick, then reload the
      // last checkpoint.
      auto sr = ehsim::step(state, trace, t, interval, restore_uj);
      account(sr);
      t += interval;
      CheckpointState cs = deserialize_checkpoint(nv_slot);
      std::vector<uint32_t> cursor;
      kernels::FixedTensor partial;
      uint32_t saved_pos = 0;
      load_state(cs, cursor, partial, saved_pos);
      hooks.restore(partial);
      pos = saved_pos;
      next_iter = (pos < plan.quanta.size()) ? plan.quanta[pos].start_iter
                                             : plan.total_iterations();
      log.events.push_back({t, EventKind::restore, -sr.debited_nj, pos});
      dead = false;
      continue;
    }

    // Launch the quanta. The whole q.e is debited whether or not the work
    // survives; harvest accrues across the quanta's duration.
    double duration_s =
        static_cast<double>(q.l) * static_cast<double>(macs_per_iter) * t_mac_ns * 1e-9;
    if (duration_s <= 0.0) duration_s = 1e-12;
    auto sr = ehsim::step(state, trace, t, duration_s, q.e_uj);
    account(sr);
    t += duration_s;
    bool mid_loss = injected(exec_count, true) || sr.brownout;
    ++exec_count;

    if (mid_loss) {
      log.lost_work_nj += sr.debited_nj;
      log.events.push_back({t, EventKind::power_loss, -sr.debited_nj, pos});
      dead = true;
      continue;
    }

    hooks.commit(q.start_iter, q.l);
    next_iter = q.start_iter + q.l;
    ++pos;
    log.events.push_back({t, EventKind::quanta_done, -sr.debited_nj, pos});

    nv_slot = serialize_checkpoint(save_state(make_cursor(next_iter), hooks.snapshot(), pos));
    log.events.push_back({t, EventKind::checkpoint, 0, pos});

    bool after_loss = injected(exec_count - 1, false) || state.energy_nj == 0;
    if (after_loss) {
      log.events.push_back({t, EventKind::power_loss, 0, pos});
      if (pos < plan.quanta.size()) dead = true;
    }
  }

  log.final_usable_nj = state.energy_nj;
  result.final_state = state;
  result.elapsed_s = t - start_t_s;
  return result;
}

}  // namespace

uint64_t QuantaPlan::total_iterations() const {
  uint64_t total = 0;
  for (const auto& q : quanta) total += q.l;
  return total;
}

void QuantaPlan::validate() const {
  uint64_t next = 0;
  for (const auto& q : quanta) {
    if (q.l < 1) throw InvalidArgument("quanta must cover at least one iteration");
    if (q.start_iter != next) {
      throw InvalidArgument("quanta must tile the iteration space exactly once");
    }
    if (q.e_uj > budget_uj + 1e-12) {
      throw InvalidArgument("quanta energy exceeds the plan budget");
    }
    next = q.start_iter + q.l;
  }
}

uint64_t optimize_quanta(uint64_t extent, double e_iter_uj, double e_ckpt_uj,
                         double budget_uj) {
  if (extent < 1) throw InvalidArgument("extent must be at least 1");
  if (!(e_iter_uj > 0.0) || !(e_ckpt_uj > 0.0)) {
    throw InvalidArgument("per-iteration and checkpoint energies must be positive");
  }
  if (e_iter_uj + e_ckpt_uj > budget_uj) {
    throw InfeasibleBudget("one iteration plus a checkpoint does not fit the budget");
  }
  // Closed form, then nudge so the comparison form matches exhaustive search
  // bit for bit.
  uint64_t l = static_cast<uint64_t>(std::floor((budget_uj - e_ckpt_uj) / e_iter_uj));
  if (l < 1) l = 1;
  while (static_cast<double>(l + 1) * e_iter_uj + e_ckpt_uj <= budget_uj) ++l;
  while (l > 1 && static_cast<double>(l) * e_iter_uj + e_ckpt_uj > budget_uj) --l;
  return std::min<uint64_t>(l, extent);
}

QuantaPlan make_plan(devmodel::KernelKind kind, uint64_t extent, uint64_t inner_width,
                     double e_iter_uj, double e_ckpt_uj, double budget_uj) {
  uint64_t l_star = optimize_quanta(extent, e_iter_uj, e_ckpt_uj, budget_uj);
  std::vector<uint64_t> chunks;
  uint64_t done = 0;
  while (done < extent) {
    uint64_t l = std::min(l_star, extent - done);
    chunks.push_back(l);
    done += l;
  }
  return make_plan_with_chunks(kind, chunks, inner_width, e_iter_uj, e_ckpt_uj, budget_uj);
}

QuantaPlan make_plan_with_chunks(devmodel::KernelKind kind, const std::vector<uint64_t>& chunks,
                                 uint64_t inner_width, double e_iter_uj, double e_ckpt_uj,
                                 double budget_uj) {
  QuantaPlan plan;
  plan.budget_uj = budget_uj;
  plan.e_ckpt_uj = e_ckpt_uj;
  plan.e_iter_uj = e_iter_uj;
  uint64_t start = 0;
  for (uint64_t l : chunks) {
    Quanta q;
    q.kernel = kind;
    q.start_iter = start;
    q.l = l;
    q.e_uj = static_cast<double>(l) * e_iter_uj + e_ckpt_uj;
    set_cursor(q, inner_width);
    plan.quanta.push_back(q);
    start += l;
  }
  plan.validate();
  return plan;
}

QuantaPlan fuse_tasks(const QuantaPlan& plan, double budget_uj) {
  QuantaPlan fused;
  fused.budget_uj = budget_uj;
  fused.e_ckpt_uj = plan.e_ckpt_uj;
  fused.e_iter_uj = plan.e_iter_uj;
  for (const auto& q : plan.quanta) {
    if (!fused.quanta.empty()) {
      Quanta& last = fused.quanta.back();
      // Fusing replaces two checkpoints with one.
      double fused_e = last.e_uj + q.e_uj - plan.e_ckpt_uj;
      if (last.start_iter + last.l == q.start_iter && fused_e <= budget_uj) {
        last.l += q.l;
        last.e_uj = fused_e;
        continue;
      }
    }
    fused.quanta.push_back(q);
  }
  return fused;
}

CheckpointState save_state(const std::vector<uint32_t>& cursor,
                           const kernels::FixedTensor& partial_output,
                           uint32_t plan_position) {
  CheckpointState s;
  s.version = kCheckpointVersion;
  s.cursor = cursor;
  s.partial_output = partial_output;
  s.plan_position = plan_position;
  return s;
}

void load_state(const CheckpointState& state, std::vector<uint32_t>& cursor,
                kernels::FixedTensor& partial_output, uint32_t& plan_position) {
  if (state.version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(state.version) +
                          " is not supported");
  }
  cursor = state.cursor;
  partial_output = state.partial_output;
  plan_position = state.plan_position;
}

std::vector<uint8_t> serialize_checkpoint(const CheckpointState& state) {
  std::vector<uint8_t> payload;
  put_u16(payload, state.version);
  put_u16(payload, static_cast<uint16_t>(state.cursor.size()));
  for (uint32_t c : state.cursor) put_u32(payload, c);
  put_u32(payload, state.plan_position);
  const auto& t = state.partial_output;
  put_u16(payload, static_cast<uint16_t>(t.fmt.bits));
  put_f64(payload, t.fmt.scale);
  put_u16(payload, static_cast<uint16_t>(t.shape.size()));
  for (size_t d : t.shape) put_u32(payload, static_cast<uint32_t>(d));
  for (int32_t code : t.codes) {
    if (t.fmt.bits <= 16) put_i16(payload, static_cast<int16_t>(code));
    else put_i32(payload, code);
  }
  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32(payload.data(), payload.size()));
  return out;
}

CheckpointState deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8) throw CorruptSnapshot("snapshot shorter than its framing");
  ByteReader head(bytes.data(), bytes.size());
  uint32_t payload_len = head.u32();
  if (bytes.size() != 4 + payload_len + 4) {
    throw CorruptSnapshot("snapshot length does not match its prefix");
  }
  const uint8_t* payload = bytes.data() + 4;
  ByteReader tail(bytes.data() + 4 + payload_len, 4);
  uint32_t stored_crc = tail.u32();
  if (crc32(payload, payload_len) != stored_crc) {
    throw CorruptSnapshot("snapshot checksum mismatch");
  }
  ByteReader r(payload, payload_len);
  CheckpointState s;
  s.version = r.u16();
  if (s.version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(s.version) +
                          " is not supported");
  }
  uint16_t cursor_count = r.u16();
  s.cursor.resize(cursor_count);
  for (auto& c : s.cursor) c = r.u32();
  s.plan_position = r.u32();
  s.partial_output.fmt.bits = r.u16();
  s.partial_output.fmt.scale = r.f64();
  uint16_t ndim = r.u16();
  s.partial_output.shape.resize(ndim);
  for (auto& d : s.partial_output.shape) d = r.u32();
  size_t count = shape_size(s.partial_output.shape);
  s.partial_output.codes.resize(count);
  for (auto& code : s.partial_output.codes) {
    code = (s.partial_output.fmt.bits <= 16) ? r.i16() : r.i32();
  }
  if (!r.ok() || r.remaining() != 0) {
    throw CorruptSnapshot("snapshot payload is truncated or has trailing bytes");
  }
  return s;
}

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::quanta_done: return "quanta_done";
    case EventKind::checkpoint: return "checkpoint";
    case EventKind::power_loss: return "power_loss";
    case EventKind::restore: return "restore";
    case EventKind::wait: return "wait";
    case EventKind::escalation: return "escalation";
  }
  return "unknown";
}

size_t ExecutionLog::count(EventKind kind) const {
  size_t n = 0;
  for (const auto& e : events) {
    if (e.kind == kind) ++n;
  }
  return n;
}

uint64_t task_extent(const KernelTask& task) {
  if (const auto* g = std::get_if<GemmTask>(&task)) {
    return static_cast<uint64_t>(g->a.shape[0]) * g->b.shape[1];
  }
  const auto& c = std::get<Conv2dTask>(task);
  return static_cast<uint64_t>(c.x.shape[0] - c.k.shape[0] + 1) *
         (c.x.shape[1] - c.k.shape[1] + 1);
}

uint64_t task_inner_width(const KernelTask& task) {
  if (const auto* g = std::get_if<GemmTask>(&task)) return g->b.shape[1];
  const auto& c = std::get<Conv2dTask>(task);
  return c.x.shape[1] - c.k.shape[1] + 1;
}

uint64_t task_macs_per_iter(const KernelTask& task) {
  if (const auto* g = std::get_if<GemmTask>(&task)) return g->a.shape[1];
  const auto& c = std::get<Conv2dTask>(task);
  return static_cast<uint64_t>(c.k.shape[0]) * c.k.shape[1];
}

devmodel::KernelKind task_kind(const KernelTask& task) {
  return std::holds_alternative<GemmTask>(task) ? devmodel::KernelKind::gemm
                                                : devmodel::KernelKind::conv2d;
}

RunResult run_intermittent(const KernelTask& task, const QuantaPlan& plan,
                           const ehsim::CapacitorState& capacitor,
                           const ehsim::EnergyTrace& trace,
                           const devmodel::HardwareProfile& profile,
                           const RunOptions& options) {
  if (const auto* g = std::get_if<GemmTask>(&task)) {
    if (g->a.shape.size() != 2 || g->b.shape.size() != 2 || g->a.shape[1] != g->b.shape[0]) {
      throw ShapeMismatch("gemm inner dimensions do not agree");
    }
  } else {
    const auto& c = std::get<Conv2dTask>(task);
    if (c.x.shape.size() != 2 || c.k.shape.size() != 2 || c.x.shape[0] < c.k.shape[0] ||
        c.x.shape[1] < c.k.shape[1]) {
      throw ShapeMismatch("conv2d kernel does not fit inside the input");
    }
  }
  plan.validate();
  if (plan.total_iterations() != task_extent(task)) {
    throw InvalidArgument("plan does not cover the kernel's iteration space");
  }

  kernels::FixedTensor volatile_out = task_output_template(task);
  EngineHooks hooks;
  hooks.commit = [&](uint64_t start, uint64_t l) {
    for (uint64_t i = start; i < start + l; ++i) {
      execute_iteration(task, i, volatile_out);
    }
  };
  hooks.snapshot = [&]() { return volatile_out; };
  hooks.restore = [&](const kernels::FixedTensor& saved) {
    if (!saved.shape.empty()) volatile_out = saved;
  };

  RunResult result = run_core(plan, task_kind(task), task_macs_per_iter(task),
                              task_inner_width(task), capacitor, trace, profile, options,
                              hooks, 0.0);
  result.output = volatile_out;
  return result;
}

RunResult run_plan_energy(const QuantaPlan& plan, devmodel::KernelKind kind,
                          uint64_t macs_per_iter, const ehsim::CapacitorState& capacitor,
                          const ehsim::EnergyTrace& trace,
                          const devmodel::HardwareProfile& profile,
                          const RunOptions& options, double start_t_s) {
  plan.validate();
  kernels::FixedTensor empty;
  empty.shape = {0};
  empty.codes.clear();
  EngineHooks hooks;
  hooks.commit = [](uint64_t, uint64_t) {};
  hooks.snapshot = [&]() { return empty; };
  hooks.restore = [](const kernels::FixedTensor&) {};
  return run_core(plan, kind, macs_per_iter, 1, capacitor, trace, profile, options, hooks,
                  start_t_s);
}

}  // namespace nexume::intermittent
