#include "mcst/checkpoint.hpp"

#include "wire.hpp"

namespace mcst {

namespace {
constexpr char kMagic[4] = {'M', 'C', 'S', 'T'};
}

void save_checkpoint(const std::string& path,
                     const std::vector<Parameter>& params) {
  std::string out;
  out.append(kMagic, 4);
  wire::put_le<uint32_t>(out, kCheckpointVersion);
  wire::put_le<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const Parameter& p : params) {
    if (p.name.size() > 0xffff)
      throw ContractError("parameter name too long: " + p.name);
    wire::put_le<uint16_t>(out, static_cast<uint16_t>(p.name.size()));
    out.append(p.name);
    if (p.tensor.rank() > 0xff)
      throw ContractError("parameter rank too large: " + p.name);
    out.push_back(static_cast<char>(p.tensor.rank()));
    for (size_t e : p.tensor.shape()) wire::put_le<uint64_t>(out, e);
    for (size_t i = 0; i < p.tensor.size(); ++i)
      wire::put_f64(out, p.tensor[i]);
  }
  wire::write_file(path, out);
}

std::vector<Parameter> load_checkpoint(const std::string& path) {
  wire::Reader r(wire::read_file(path), path);
  r.expect_magic(kMagic, "checkpoint");
  const uint32_t version = r.le<uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  const uint32_t count = r.le<uint32_t>();
  std::vector<Parameter> params;
  params.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.le<uint16_t>();
    std::string name = r.str(name_len);
    const uint8_t rank = r.le<uint8_t>();
    Shape shape(rank);
    for (uint8_t a = 0; a < rank; ++a)
      shape[a] = static_cast<size_t>(r.le<uint64_t>());
    const size_t n = numel(shape);
    std::vector<double> values(n);
    for (size_t j = 0; j < n; ++j) values[j] = r.f64();
    params.push_back({std::move(name), Tensor(std::move(shape),
                                              std::move(values))});
  }
  r.expect_end();
  return params;
}

}  // namespace mcst
