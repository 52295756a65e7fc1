#pragma once

// Training metrics rows and their CSV form. Reals print with 9 significant
// digits through a fixed format, so identical runs produce identical bytes.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace collaq {

struct RunMetricsRow {
  long long step = 0;
  long long episode = 0;
  double epsilon = 0.0;
  double loss_dqn = 0.0;
  double loss_mara = 0.0;
  double mean_abs_q_alone = 0.0;
  double mean_abs_q_collab_at_alone = 0.0;
  double train_return_window = 0.0;
  double eval_return = 0.0;

  void validate() const {
    for (double v : {epsilon, loss_dqn, loss_mara, mean_abs_q_alone, mean_abs_q_collab_at_alone,
                     train_return_window, eval_return}) {
      if (!std::isfinite(v)) throw std::runtime_error("RunMetricsRow: non-finite value");
    }
  }
};

inline std::string metrics_header() {
  return "step,episode,epsilon,loss_dqn,loss_mara,mean_abs_q_alone,"
         "mean_abs_q_collab_at_alone,train_return_window,eval_return";
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string format_metrics_row(const RunMetricsRow& row) {
  row.validate();
  std::string out = std::to_string(row.step) + "," + std::to_string(row.episode);
  for (double v : {row.epsilon, row.loss_dqn, row.loss_mara, row.mean_abs_q_alone,
                   row.mean_abs_q_collab_at_alone, row.train_return_window, row.eval_return}) {
    out += ",";
    out += format_real(v);
  }
  return out;
}

/// Appends rows to a CSV file, writing the header exactly once.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("MetricsWriter: cannot open " + path);
  }

  void append(const RunMetricsRow& row) {
    if (!header_written_) {
      out_ << metrics_header() << "\n";
      header_written_ = true;
    }
    out_ << format_metrics_row(row) << "\n";
    if (!out_) throw std::runtime_error("MetricsWriter: write failed");
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  bool header_written_ = false;
};

}  // namespace collaq
