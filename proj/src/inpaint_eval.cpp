#include "binec/inpaint_eval.hpp"

#include <algorithm>

#include "binec/metrics.hpp"
#include "binec/training.hpp"

namespace binec {

InpaintPredictions predict_inpainting(const CodecModel& masked, const CodecModel& sinet,
                                      const Tensor& image) {
  if (!masked.masked()) throw CodecError("first model must be a masked BINet");
  if (sinet.variant() != Variant::kSINet) throw CodecError("second model must be a SINet");
  const CodecModel base = extract_sinet_base(sinet);
  const PatchGrid grid = PatchGrid::from_image(image);
  const int rows = grid.rows(), cols = grid.cols();

  const CompressedImage masked_codes = compress_image(masked, image, 1);
  const CompressedImage base_codes = compress_image(base, image, 1);
  const std::vector<Reconstruction> decoded = reconstruct_patches(base, base_codes, 1);

  InpaintPredictions out;
  out.decoded = decompress_image(base, base_codes, 1);
  std::vector<Tensor> m, s;
  std::array<std::vector<Tensor>, 4> intra;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      m.push_back(masked_inpaint(masked, masked_codes, r, c));
      s.push_back(sinet_predict(sinet, causal_context(decoded, rows, cols, r, c)));
      const IntraBorders borders = intra_borders(out.decoded, r, c);
      for (int k = 0; k < 4; ++k) intra[k].push_back(intra_predict(static_cast<IntraMode>(k), borders));
    }
  }
  out.masked = PatchGrid::assemble(rows, cols, m);
  out.sinet = PatchGrid::assemble(rows, cols, s);
  for (int k = 0; k < 4; ++k) out.intra[k] = PatchGrid::assemble(rows, cols, intra[k]);
  return out;
}

std::vector<InpaintScore> score_inpainting(const CodecModel& masked, const CodecModel& sinet,
                                           std::span<const Image8> images) {
  std::vector<InpaintScore> scores{{"MaskedBINet"}, {"SINet"}, {"DC_PRED"},
                                   {"H_PRED"},      {"V_PRED"}, {"TM_PRED"}};
  for (const Image8& image : images) {
    const Tensor x = normalize(image);
    const InpaintPredictions p = predict_inpainting(masked, sinet, x);
    const std::array<const Tensor*, 6> predictions{&p.masked, &p.sinet, &p.intra[0],
                                                   &p.intra[1], &p.intra[2], &p.intra[3]};
    const PatchGrid truth = PatchGrid::from_image(x);
    for (std::size_t k = 0; k < predictions.size(); ++k) {
      const PatchGrid predicted = PatchGrid::from_image(*predictions[k]);
      for (int r = 1; r + 1 < truth.rows(); ++r) {
        for (int c = 1; c + 1 < truth.cols(); ++c) {
          const Image8 a = denormalize(truth.patch(r, c));
          const Image8 b = denormalize(predicted.patch(r, c));
          scores[k].psnr += std::min(psnr(a, b), kPsnrCap);
          scores[k].ssim += ssim(a, b);
          ++scores[k].patches;
        }
      }
    }
  }
  for (auto& s : scores) {
    if (s.patches == 0) throw std::invalid_argument("no patch has a full neighbourhood (images need >= 96x96)");
    s.psnr /= s.patches;
    s.ssim /= s.patches;
  }
  return scores;
}

}  // namespace binec
