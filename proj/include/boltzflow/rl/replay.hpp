#pragma once

#include "boltzflow/rl/env.hpp"

#include <algorithm>
#include <cstdint>
#include <random>

namespace boltzflow::rl {

/// Column-per-transition minibatch.
struct TransitionBatch {
  Mat s, a, s2;
  Vec r, done;  // done is 0 or 1
  std::vector<Eigen::Index> slots;  // buffer slots the batch was drawn from

  Eigen::Index size() const { return r.size(); }
};

/// Fixed-capacity ring buffer with FIFO overwrite and uniform sampling.
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, Eigen::Index capacity)
      : s_(state_dim, capacity), a_(action_dim, capacity), s2_(state_dim, capacity), r_(capacity), done_(capacity),
        id_(capacity) {
    require(capacity >= 1, "replay: capacity must be >= 1");
  }

  void add(const Vec& s, const Vec& a, double r, const Vec& s2, bool done) {
    if (s.size() != s_.rows() || a.size() != a_.rows() || s2.size() != s_.rows())
      throw ConfigError("replay: transition dimension mismatch");
    s_.col(cursor_) = s;
    a_.col(cursor_) = a;
    s2_.col(cursor_) = s2;
    r_(cursor_) = r;
    done_(cursor_) = done ? 1.0 : 0.0;
    id_(cursor_) = inserted_++;
    cursor_ = (cursor_ + 1) % capacity();
    size_ = std::min(size_ + 1, capacity());
  }

  TransitionBatch sample(Eigen::Index n, Rng& rng) const {
    if (size_ == 0) throw EstimationError("replay: sampling from an empty buffer");
    std::uniform_int_distribution<Eigen::Index> pick(0, size_ - 1);
    TransitionBatch b;
    b.s.resize(s_.rows(), n);
    b.a.resize(a_.rows(), n);
    b.s2.resize(s_.rows(), n);
    b.r.resize(n);
    b.done.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index k = pick(rng);
      b.s.col(i) = s_.col(k);
      b.a.col(i) = a_.col(k);
      b.s2.col(i) = s2_.col(k);
      b.r(i) = r_(k);
      b.done(i) = done_(k);
      b.slots.push_back(k);
    }
    return b;
  }

  Eigen::Index size() const { return size_; }
  Eigen::Index capacity() const { return r_.size(); }
  std::int64_t inserted() const { return inserted_; }
  /// Insertion index (0-based, over the whole run) of the transition stored in `slot`.
  std::int64_t insertion_id(Eigen::Index slot) const { return id_(slot); }

 private:
  Mat s_, a_, s2_;
  Vec r_, done_;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> id_;
  Eigen::Index cursor_ = 0, size_ = 0;
  std::int64_t inserted_ = 0;
};

}  // namespace boltzflow::rl
