#include "softtwin/controller.hpp"
#include "softtwin/twin.hpp"

namespace softtwin::twin {

namespace {

std::int64_t steady_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

TwinEngine::TwinEngine(TwinConfig cfg, Clock clock)
    : cfg_(std::move(cfg)),
      clock_(clock ? std::move(clock) : Clock(steady_ms)),
      client_(cfg_.controller, cfg_.unit_id,
              std::min<std::chrono::milliseconds>(std::chrono::milliseconds(250), cfg_.poll_period() * 4)) {
  cfg_.validate();
  epoch_ms_ = clock_();
}

TwinEngine::~TwinEngine() { stop(); }

std::int64_t TwinEngine::now_ms() const { return clock_() - epoch_ms_; }

void TwinEngine::publish(TwinState state) {
  {
    std::lock_guard lock(state_mutex_);
    state.timestamp_ms = std::max(now_ms(), last_timestamp_ + 1);
    last_timestamp_ = state.timestamp_ms;
    latest_ = std::make_shared<const TwinState>(std::move(state));
    ++sequence_;
  }
  state_cv_.notify_all();
}

void TwinEngine::poll_once() {
  const std::int64_t now = now_ms();
  if (!link_ok_ && attempted_ && now < next_retry_ms_) return;
  attempted_ = true;

  try {
    const auto regs = client_.read_holding(controller::reg::true_pressure, 2);
    TwinState state = pipeline_step(modbus::register_to_pressure(regs[0]), cfg_, cfg_.flange.at(now));
    state.controller_faults = regs[1];
    state.link_ok = true;
    link_ok_ = true;
    backoff_ = std::chrono::milliseconds(0);
    last_good_ = state;
    publish(std::move(state));
  } catch (const std::exception& e) {
    client_.close();
    link_ok_ = false;
    backoff_ = backoff_.count() == 0 ? cfg_.poll_period() : std::min(backoff_ * 2, kMaxBackoff);
    next_retry_ms_ = now + backoff_.count();

    TwinState state = last_good_ ? *last_good_ : TwinState{};
    state.link_ok = false;
    if (!last_good_) state.error = std::string("no data from controller: ") + e.what();
    publish(std::move(state));
  }
}

void TwinEngine::start() {
  if (running_.exchange(true)) return;
  loop_ = std::thread([this] {
    const auto period = cfg_.poll_period();
    auto next = std::chrono::steady_clock::now();
    std::unique_lock lock(loop_mutex_);
    while (running_) {
      lock.unlock();
      poll_once();
      lock.lock();
      next += period;
      const auto now = std::chrono::steady_clock::now();
      if (next < now) next = now;
      loop_cv_.wait_until(lock, next, [this] { return !running_; });
    }
  });
}

void TwinEngine::stop() {
  {
    std::lock_guard lock(loop_mutex_);
    if (!running_) return;
    running_ = false;
  }
  loop_cv_.notify_all();
  if (loop_.joinable()) loop_.join();
}

std::shared_ptr<const TwinState> TwinEngine::latest() const {
  std::lock_guard lock(state_mutex_);
  return latest_;
}

std::uint64_t TwinEngine::sequence() const {
  std::lock_guard lock(state_mutex_);
  return sequence_;
}

std::pair<std::shared_ptr<const TwinState>, std::uint64_t> TwinEngine::wait_for_update(
    std::uint64_t after, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(state_mutex_);
  state_cv_.wait_for(lock, timeout, [&] { return sequence_ > after; });
  return {latest_, sequence_};
}

CommandAck TwinEngine::command(const Command& cmd) {
  CommandAck ack;
  ack.write = to_register_write(cmd);
  if (attempted_ && !link_ok_) throw Unavailable("controller link is down");
  try {
    client_.write_single(ack.write.address, ack.write.value);
    ack.ok = true;
    ack.message = "ok";
  } catch (const modbus::ModbusException& e) {
    ack.exception = e.code();
    ack.message = e.what();
  } catch (const net::LinkError& e) {
    throw Unavailable(std::string("controller link is down: ") + e.what());
  }
  return ack;
}

}  // namespace softtwin::twin
