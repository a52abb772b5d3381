#include "odseg/metrics.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "odseg/errors.hpp"
#include "odseg/model.hpp"

namespace odseg {

Tensor binarize(const Tensor& predictions, float threshold) {
  Tensor out(predictions.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = predictions[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

ConfusionCounts confusion(const Tensor& predicted, const Tensor& truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion: shape mismatch " + shape_to_string(predicted.shape()) + " vs " +
                     shape_to_string(truth.shape()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const float p = predicted[i], t = truth[i];
    if ((p != 0.0f && p != 1.0f) || (t != 0.0f && t != 1.0f)) {
      throw ParameterError("confusion: masks must be binary");
    }
    if (t == 1.0f) {
      (p == 1.0f ? c.tp : c.fn)++;
    } else {
      (p == 1.0f ? c.fp : c.tn)++;
    }
  }
  return c;
}

Metrics compute_metrics(const ConfusionCounts& c) {
  Metrics m;
  const auto total = static_cast<double>(c.total());
  m.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / total : 1.0;
  const std::uint64_t truth = c.tp + c.fn;
  const std::uint64_t predicted = c.tp + c.fp;
  if (truth == 0 && predicted == 0) {
    m.dice = m.iou = m.sensitivity = 1.0;
    return m;
  }
  const auto tp = static_cast<double>(c.tp);
  m.dice = 2.0 * tp / (2.0 * tp + static_cast<double>(c.fp + c.fn));
  m.iou = tp / (tp + static_cast<double>(c.fp + c.fn));
  m.sensitivity = truth == 0 ? 1.0 : tp / static_cast<double>(truth);
  return m;
}

namespace {

Metrics as_percent(const Metrics& m) { return {100.0 * m.accuracy, 100.0 * m.dice, 100.0 * m.sensitivity, 100.0 * m.iou}; }

}  // namespace

EvalReport timed_evaluate(const Model& model, const Dataset& dataset, float threshold) {
  if (dataset.empty()) throw ParameterError("timed_evaluate: empty dataset");
  EvalReport report;
  Metrics sum_metrics;
  double sum_seconds = 0.0;
  for (const Sample& s : dataset) {
    const Tensor batch = s.image.reshaped({1, s.image.dim(0), s.image.dim(1), s.image.dim(2)});
    const auto start = std::chrono::steady_clock::now();
    const Tensor mask = binarize(model.predict(batch), threshold);
    const auto stop = std::chrono::steady_clock::now();
    ImageEval e;
    e.id = s.source_id;
    e.counts = confusion(mask, s.mask);
    e.metrics = compute_metrics(e.counts);
    e.seconds = std::chrono::duration<double>(stop - start).count();
    report.pooled_counts += e.counts;
    sum_metrics.accuracy += e.metrics.accuracy;
    sum_metrics.dice += e.metrics.dice;
    sum_metrics.sensitivity += e.metrics.sensitivity;
    sum_metrics.iou += e.metrics.iou;
    sum_seconds += e.seconds;
    report.images.push_back(std::move(e));
  }
  const auto n = static_cast<double>(dataset.size());
  report.pooled = as_percent(compute_metrics(report.pooled_counts));
  report.mean_of_images = as_percent({sum_metrics.accuracy / n, sum_metrics.dice / n, sum_metrics.sensitivity / n,
                                      sum_metrics.iou / n});
  report.mean_seconds = sum_seconds / n;
  return report;
}

std::string EvalReport::to_key_value() const {
  std::ostringstream os;
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    os << key << '=' << buf << '\n';
  };
  os << "images=" << images.size() << '\n';
  os << "tp=" << pooled_counts.tp << "\nfp=" << pooled_counts.fp << "\ntn=" << pooled_counts.tn
     << "\nfn=" << pooled_counts.fn << '\n';
  put("pooled_acc", pooled.accuracy);
  put("pooled_dc", pooled.dice);
  put("pooled_sen", pooled.sensitivity);
  put("pooled_iou", pooled.iou);
  put("mean_acc", mean_of_images.accuracy);
  put("mean_dc", mean_of_images.dice);
  put("mean_sen", mean_of_images.sensitivity);
  put("mean_iou", mean_of_images.iou);
  std::snprintf(buf, sizeof buf, "%.6f", mean_seconds);
  os << "mean_seconds=" << buf << '\n';
  return os.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "id,tp,fp,tn,fn,acc,dc,sen,iou,seconds\n";
  char buf[160];
  for (const ImageEval& e : images) {
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%.4f,%.4f,%.6f", 100.0 * e.metrics.accuracy, 100.0 * e.metrics.dice,
                  100.0 * e.metrics.sensitivity, 100.0 * e.metrics.iou, e.seconds);
    os << e.id << ',' << e.counts.tp << ',' << e.counts.fp << ',' << e.counts.tn << ',' << e.counts.fn << buf << '\n';
  }
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write error on '" + path.string() + "'");
}

}  // namespace odseg
