// Versioned binary checkpoint:
//
//   "NFLATCKP" u32 version
//   str config | str scheme | str labels | str chars | str word_tokens | str lexicon
//   u32 tensor_count, then per tensor: str name, u8 dtype (0 = f64),
//   u32 rank, u64 dims[rank], little-endian f64 data
//
// where str = u64 byte length + UTF-8 bytes and list sections are
// newline-joined. All integers are little-endian.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nflat/errors.hpp"
#include "nflat/model.hpp"

namespace nflat {

inline constexpr char kCheckpointMagic[8] = {'N', 'F', 'L', 'A', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw DataError("checkpoint truncated");
    u |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(u);
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_le<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& in) {
  const auto n = get_le<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw DataError("checkpoint string section too large");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(in.gcount()) != n) throw DataError("checkpoint truncated");
  return s;
}

inline std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += s + "\n";
  return out;
}

inline std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace detail

inline void save_checkpoint(const NflatModel& model, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_str(out, model.config().to_text());
  detail::put_str(out, to_string(model.schema().scheme()));
  detail::put_str(out, detail::join_lines(model.schema().labels()));
  detail::put_str(out, utf8::encode(model.chars().characters()));
  detail::put_str(out, detail::join_lines(model.word_table().tokens));
  detail::put_str(out, detail::join_lines(model.lexicon_words_utf8()));
  const auto& items = model.params().items();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    detail::put_str(out, name);
    detail::put_le<std::uint8_t>(out, 0);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double x : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  if (!out) throw DataError("failed writing checkpoint");
}

inline void save_checkpoint(const NflatModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  save_checkpoint(model, out);
}

inline NflatModel load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not an NFLAT checkpoint");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));

  std::istringstream cfg_text(detail::get_str(in));
  ModelConfig config = ModelConfig::parse(cfg_text, "<checkpoint config>");
  const std::string scheme = detail::get_str(in);
  if (scheme != "BMES" && scheme != "BIO") throw DataError("bad tag scheme in checkpoint: " + scheme);
  LabelSchema schema(scheme == "BMES" ? TagScheme::BMES : TagScheme::BIO, detail::split_lines(detail::get_str(in)));
  CharVocab chars;
  for (char32_t c : utf8::decode(detail::get_str(in))) chars.add(c);
  const auto tokens = detail::split_lines(detail::get_str(in));
  const auto lexicon = detail::split_lines(detail::get_str(in));

  ParamStore store;
  const auto count = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = detail::get_str(in);
    if (detail::get_le<std::uint8_t>(in) != 0) throw DataError("unsupported dtype for tensor " + name);
    const auto rank = detail::get_le<std::uint32_t>(in);
    if (rank > 8) throw DataError("implausible rank for tensor " + name);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint64_t>(in);
    const std::size_t numel = shape_numel(shape);
    if (numel > (1ULL << 31)) throw DataError("tensor " + name + " too large");
    std::vector<double> data(numel);
    for (auto& x : data) x = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
    store.insert(name, Tensor::from(std::move(shape), std::move(data), true));
  }

  if (!store.contains("word_embed")) throw DataError("checkpoint lacks word_embed");
  const Tensor& we = store.get("word_embed");
  if (we.rank() != 2 || tokens.size() != we.dim(0)) throw DataError("word table size does not match word_embed");
  EmbeddingTable table;
  table.dim = we.dim(1);
  for (const auto& tok : tokens) table.add_row(tok, we.data().subspan(table.rows() * table.dim, table.dim));
  table.unknown_row = table.index.count(kUnknownToken) ? table.index.at(kUnknownToken) : -1;
  table.non_word_row = table.index.count(kNonWordToken) ? table.index.at(kNonWordToken) : -1;
  try {
    return NflatModel::assemble(std::move(config), std::move(schema), std::move(chars), std::move(table), lexicon,
                                std::move(store));
  } catch (const ContractError& e) {
    throw DataError(std::string("inconsistent checkpoint: ") + e.what());
  }
}

inline NflatModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace nflat
