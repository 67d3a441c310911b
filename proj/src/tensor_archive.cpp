#include "neuroaudit/tensor_archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "json.hpp"
#include "neuroaudit/error.hpp"

namespace neuroaudit {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive payloads are read in place as little-endian floats");

using nlohmann::json;

struct Entry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

std::uint64_t read_u64_le(std::span<const std::byte> bytes) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint64_t>(bytes[i]);
  return v;
}

Entry parse_entry(const std::string& name, const json& spec) {
  if (!spec.is_object()) throw FormatError("tensor '" + name + "': header entry is not an object");
  Entry e;
  e.name = name;
  const auto dtype = spec.find("dtype");
  if (dtype == spec.end() || !dtype->is_string())
    throw FormatError("tensor '" + name + "': missing dtype");
  if (dtype->get<std::string>() != "F32")
    throw FormatError("tensor '" + name + "': unknown dtype '" + dtype->get<std::string>() + "'");
  const auto shape = spec.find("shape");
  if (shape == spec.end() || !shape->is_array())
    throw FormatError("tensor '" + name + "': missing shape");
  for (const auto& d : *shape) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
      throw FormatError("tensor '" + name + "': invalid shape dimension");
    e.shape.push_back(d.get<std::int64_t>());
  }
  const auto offsets = spec.find("data_offsets");
  if (offsets == spec.end() || !offsets->is_array() || offsets->size() != 2 ||
      !(*offsets)[0].is_number_unsigned() || !(*offsets)[1].is_number_unsigned())
    throw FormatError("tensor '" + name + "': invalid data_offsets");
  e.begin = (*offsets)[0].get<std::uint64_t>();
  e.end = (*offsets)[1].get<std::uint64_t>();
  if (e.end < e.begin) throw FormatError("tensor '" + name + "': data_offsets reversed");
  return e;
}

}  // namespace

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::int64_t d) { return a * static_cast<std::size_t>(d); });
}

TensorArchive TensorArchive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open tensor archive " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(std::as_bytes(std::span(raw)));
}

TensorArchive TensorArchive::parse(std::span<const std::byte> bytes) {
  if (bytes.size() < 8) throw FormatError("archive shorter than its 8-byte header length");
  const std::uint64_t header_len = read_u64_le(bytes.first(8));
  if (header_len > bytes.size() - 8)
    throw FormatError("malformed header length " + std::to_string(header_len) + " exceeds file size");
  const auto header_bytes = bytes.subspan(8, header_len);
  json header;
  try {
    header = json::parse(reinterpret_cast<const char*>(header_bytes.data()),
                         reinterpret_cast<const char*>(header_bytes.data()) + header_bytes.size());
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("archive header is not a JSON object");

  const auto payload = bytes.subspan(8 + header_len);
  std::vector<Entry> entries;
  for (const auto& [name, spec] : header.items()) {
    if (name == "__metadata__") continue;
    entries.push_back(parse_entry(name, spec));
  }

  // Byte ranges must tile the payload exactly.
  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->begin < b->begin || (a->begin == b->begin && a->end < b->end); });
  std::uint64_t cursor = 0;
  for (const Entry* e : by_offset) {
    if (e->begin != cursor)
      throw FormatError("tensor '" + e->name + "': data_offsets overlap or leave a gap");
    cursor = e->end;
  }
  if (cursor != payload.size())
    throw FormatError("data_offsets cover " + std::to_string(cursor) + " bytes but payload has " +
                      std::to_string(payload.size()));

  TensorArchive archive;
  for (const auto& e : entries) {
    Tensor t;
    t.shape = e.shape;
    const std::size_t n = t.numel();
    if (n * sizeof(float) != e.end - e.begin)
      throw FormatError("tensor '" + e.name + "': shape does not match byte range");
    t.data.resize(n);
    if (n > 0) std::memcpy(t.data.data(), payload.data() + e.begin, n * sizeof(float));
    archive.tensors_.emplace(e.name, std::move(t));
  }
  return archive;
}

void TensorArchive::add(std::string name, Tensor tensor) {
  if (tensor.numel() != tensor.data.size())
    throw InvalidArgument("tensor '" + name + "': data size does not match shape");
  tensors_.insert_or_assign(std::move(name), std::move(tensor));
}

bool TensorArchive::contains(const std::string& name) const { return tensors_.count(name) != 0; }

const Tensor& TensorArchive::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::byte> TensorArchive::serialize() const {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t len = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + len}}};
    offset += len;
  }
  const std::string text = header.dump();
  std::vector<std::byte> out(8 + text.size() + offset);
  std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((n >> (8 * i)) & 0xff);
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::size_t cursor = 8 + text.size();
  for (const auto& [name, t] : tensors_) {
    const std::size_t len = t.data.size() * sizeof(float);
    if (len > 0) std::memcpy(out.data() + cursor, t.data.data(), len);
    cursor += len;
  }
  return out;
}

void TensorArchive::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write tensor archive " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace neuroaudit
