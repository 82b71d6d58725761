#include "hasnets/checkpoint.hpp"

#include <fstream>

#include "hasnets/binary_io.hpp"

namespace hasnets::nn {

void write_checkpoint(std::ostream& out, const Model& model) {
  out.write("HNM1", 4);
  const std::string descriptor = model.descriptor();
  io::put_u64(out, descriptor.size());
  out.write(descriptor.data(), static_cast<std::streamsize>(descriptor.size()));
  for (const Tensor* p : model.parameters()) {
    io::put_u64(out, p->rank());
    for (std::size_t d : p->shape()) io::put_u64(out, d);
    for (double v : p->data()) io::put_f64(out, v);
  }
}

Model read_checkpoint(std::istream& in) {
  io::Reader reader(in);
  reader.magic("HNM1", "model checkpoint");
  const std::uint64_t length = reader.u64("descriptor length");
  if (length > (1u << 20)) throw ParseError("implausible descriptor length", reader.offset() - 8);
  std::string descriptor(length, '\0');
  reader.bytes(descriptor.data(), length, "descriptor");
  Model model = Model::from_descriptor(descriptor);
  for (Tensor* p : model.parameters()) {
    const std::uint64_t at = reader.offset();
    const std::uint64_t rank = reader.u64("tensor rank");
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 8; ++i) shape.push_back(reader.u64("tensor dim"));
    if (shape != p->shape()) {
      throw ParseError("parameter shape " + shape_string(shape) + " does not match descriptor " +
                           shape_string(p->shape()),
                       at);
    }
    for (double& v : p->data()) v = reader.f64("tensor data");
  }
  if (!reader.at_end()) throw ParseError("trailing bytes after last parameter", reader.offset());
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace hasnets::nn
