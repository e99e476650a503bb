#include "nopvis/opcodes.hpp"

#include <algorithm>
#include <array>

namespace nopvis {
namespace {

constexpr OpcodeInfo kOpcodes[] = {
    {"nop", 0x00, ""},
    {"move", 0x01, "wr"},
    {"move/from16", 0x02, "wr"},
    {"move/16", 0x03, "wr"},
    {"move-wide", 0x04, "WR"},
    {"move-wide/from16", 0x05, "WR"},
    {"move-wide/16", 0x06, "WR"},
    {"move-object", 0x07, "wr"},
    {"move-object/from16", 0x08, "wr"},
    {"move-object/16", 0x09, "wr"},
    {"move-result", 0x0a, "w"},
    {"move-result-wide", 0x0b, "W"},
    {"move-result-object", 0x0c, "w"},
    {"move-exception", 0x0d, "w"},
    {"return-void", 0x0e, ""},
    {"return", 0x0f, "r"},
    {"return-wide", 0x10, "R"},
    {"return-object", 0x11, "r"},
    {"const/4", 0x12, "w"},
    {"const/16", 0x13, "w"},
    {"const", 0x14, "w"},
    {"const/high16", 0x15, "w"},
    {"const-wide/16", 0x16, "W"},
    {"const-wide/32", 0x17, "W"},
    {"const-wide", 0x18, "W"},
    {"const-wide/high16", 0x19, "W"},
    {"const-string", 0x1a, "w"},
    {"const-string/jumbo", 0x1b, "w"},
    {"const-class", 0x1c, "w"},
    {"monitor-enter", 0x1d, "r"},
    {"monitor-exit", 0x1e, "r"},
    {"check-cast", 0x1f, "x"},
    {"instance-of", 0x20, "wr"},
    {"array-length", 0x21, "wr"},
    {"new-instance", 0x22, "w"},
    {"new-array", 0x23, "wr"},
    {"filled-new-array", 0x24, "v"},
    {"filled-new-array/range", 0x25, "v"},
    {"fill-array-data", 0x26, "r"},
    {"throw", 0x27, "r"},
    {"goto", 0x28, ""},
    {"goto/16", 0x29, ""},
    {"goto/32", 0x2a, ""},
    {"packed-switch", 0x2b, "r"},
    {"sparse-switch", 0x2c, "r"},
    {"cmpl-float", 0x2d, "wrr"},
    {"cmpg-float", 0x2e, "wrr"},
    {"cmpl-double", 0x2f, "wRR"},
    {"cmpg-double", 0x30, "wRR"},
    {"cmp-long", 0x31, "wRR"},
    {"if-eq", 0x32, "rr"},
    {"if-ne", 0x33, "rr"},
    {"if-lt", 0x34, "rr"},
    {"if-ge", 0x35, "rr"},
    {"if-gt", 0x36, "rr"},
    {"if-le", 0x37, "rr"},
    {"if-eqz", 0x38, "r"},
    {"if-nez", 0x39, "r"},
    {"if-ltz", 0x3a, "r"},
    {"if-gez", 0x3b, "r"},
    {"if-gtz", 0x3c, "r"},
    {"if-lez", 0x3d, "r"},
    {"aget", 0x44, "wrr"},
    {"aget-wide", 0x45, "Wrr"},
    {"aget-object", 0x46, "wrr"},
    {"aget-boolean", 0x47, "wrr"},
    {"aget-byte", 0x48, "wrr"},
    {"aget-char", 0x49, "wrr"},
    {"aget-short", 0x4a, "wrr"},
    {"aput", 0x4b, "rrr"},
    {"aput-wide", 0x4c, "Rrr"},
    {"aput-object", 0x4d, "rrr"},
    {"aput-boolean", 0x4e, "rrr"},
    {"aput-byte", 0x4f, "rrr"},
    {"aput-char", 0x50, "rrr"},
    {"aput-short", 0x51, "rrr"},
    {"iget", 0x52, "wr"},
    {"iget-wide", 0x53, "Wr"},
    {"iget-object", 0x54, "wr"},
    {"iget-boolean", 0x55, "wr"},
    {"iget-byte", 0x56, "wr"},
    {"iget-char", 0x57, "wr"},
    {"iget-short", 0x58, "wr"},
    {"iput", 0x59, "rr"},
    {"iput-wide", 0x5a, "Rr"},
    {"iput-object", 0x5b, "rr"},
    {"iput-boolean", 0x5c, "rr"},
    {"iput-byte", 0x5d, "rr"},
    {"iput-char", 0x5e, "rr"},
    {"iput-short", 0x5f, "rr"},
    {"sget", 0x60, "w"},
    {"sget-wide", 0x61, "W"},
    {"sget-object", 0x62, "w"},
    {"sget-boolean", 0x63, "w"},
    {"sget-byte", 0x64, "w"},
    {"sget-char", 0x65, "w"},
    {"sget-short", 0x66, "w"},
    {"sput", 0x67, "r"},
    {"sput-wide", 0x68, "R"},
    {"sput-object", 0x69, "r"},
    {"sput-boolean", 0x6a, "r"},
    {"sput-byte", 0x6b, "r"},
    {"sput-char", 0x6c, "r"},
    {"sput-short", 0x6d, "r"},
    {"invoke-virtual", 0x6e, "v"},
    {"invoke-super", 0x6f, "v"},
    {"invoke-direct", 0x70, "v"},
    {"invoke-static", 0x71, "v"},
    {"invoke-interface", 0x72, "v"},
    {"invoke-virtual/range", 0x74, "v"},
    {"invoke-super/range", 0x75, "v"},
    {"invoke-direct/range", 0x76, "v"},
    {"invoke-static/range", 0x77, "v"},
    {"invoke-interface/range", 0x78, "v"},
    {"neg-int", 0x7b, "wr"},
    {"not-int", 0x7c, "wr"},
    {"neg-long", 0x7d, "WR"},
    {"not-long", 0x7e, "WR"},
    {"neg-float", 0x7f, "wr"},
    {"neg-double", 0x80, "WR"},
    {"int-to-long", 0x81, "Wr"},
    {"int-to-float", 0x82, "wr"},
    {"int-to-double", 0x83, "Wr"},
    {"long-to-int", 0x84, "wR"},
    {"long-to-float", 0x85, "wR"},
    {"long-to-double", 0x86, "WR"},
    {"float-to-int", 0x87, "wr"},
    {"float-to-long", 0x88, "Wr"},
    {"float-to-double", 0x89, "Wr"},
    {"double-to-int", 0x8a, "wR"},
    {"double-to-long", 0x8b, "WR"},
    {"double-to-float", 0x8c, "wR"},
    {"int-to-byte", 0x8d, "wr"},
    {"int-to-char", 0x8e, "wr"},
    {"int-to-short", 0x8f, "wr"},
    {"add-int", 0x90, "wrr"},
    {"sub-int", 0x91, "wrr"},
    {"mul-int", 0x92, "wrr"},
    {"div-int", 0x93, "wrr"},
    {"rem-int", 0x94, "wrr"},
    {"and-int", 0x95, "wrr"},
    {"or-int", 0x96, "wrr"},
    {"xor-int", 0x97, "wrr"},
    {"shl-int", 0x98, "wrr"},
    {"shr-int", 0x99, "wrr"},
    {"ushr-int", 0x9a, "wrr"},
    {"add-long", 0x9b, "WRR"},
    {"sub-long", 0x9c, "WRR"},
    {"mul-long", 0x9d, "WRR"},
    {"div-long", 0x9e, "WRR"},
    {"rem-long", 0x9f, "WRR"},
    {"and-long", 0xa0, "WRR"},
    {"or-long", 0xa1, "WRR"},
    {"xor-long", 0xa2, "WRR"},
    {"shl-long", 0xa3, "WRr"},
    {"shr-long", 0xa4, "WRr"},
    {"ushr-long", 0xa5, "WRr"},
    {"add-float", 0xa6, "wrr"},
    {"sub-float", 0xa7, "wrr"},
    {"mul-float", 0xa8, "wrr"},
    {"div-float", 0xa9, "wrr"},
    {"rem-float", 0xaa, "wrr"},
    {"add-double", 0xab, "WRR"},
    {"sub-double", 0xac, "WRR"},
    {"mul-double", 0xad, "WRR"},
    {"div-double", 0xae, "WRR"},
    {"rem-double", 0xaf, "WRR"},
    {"add-int/2addr", 0xb0, "xr"},
    {"sub-int/2addr", 0xb1, "xr"},
    {"mul-int/2addr", 0xb2, "xr"},
    {"div-int/2addr", 0xb3, "xr"},
    {"rem-int/2addr", 0xb4, "xr"},
    {"and-int/2addr", 0xb5, "xr"},
    {"or-int/2addr", 0xb6, "xr"},
    {"xor-int/2addr", 0xb7, "xr"},
    {"shl-int/2addr", 0xb8, "xr"},
    {"shr-int/2addr", 0xb9, "xr"},
    {"ushr-int/2addr", 0xba, "xr"},
    {"add-long/2addr", 0xbb, "XR"},
    {"sub-long/2addr", 0xbc, "XR"},
    {"mul-long/2addr", 0xbd, "XR"},
    {"div-long/2addr", 0xbe, "XR"},
    {"rem-long/2addr", 0xbf, "XR"},
    {"and-long/2addr", 0xc0, "XR"},
    {"or-long/2addr", 0xc1, "XR"},
    {"xor-long/2addr", 0xc2, "XR"},
    {"shl-long/2addr", 0xc3, "Xr"},
    {"shr-long/2addr", 0xc4, "Xr"},
    {"ushr-long/2addr", 0xc5, "Xr"},
    {"add-float/2addr", 0xc6, "xr"},
    {"sub-float/2addr", 0xc7, "xr"},
    {"mul-float/2addr", 0xc8, "xr"},
    {"div-float/2addr", 0xc9, "xr"},
    {"rem-float/2addr", 0xca, "xr"},
    {"add-double/2addr", 0xcb, "XR"},
    {"sub-double/2addr", 0xcc, "XR"},
    {"mul-double/2addr", 0xcd, "XR"},
    {"div-double/2addr", 0xce, "XR"},
    {"rem-double/2addr", 0xcf, "XR"},
    {"add-int/lit16", 0xd0, "wr"},
    {"rsub-int", 0xd1, "wr"},
    {"mul-int/lit16", 0xd2, "wr"},
    {"div-int/lit16", 0xd3, "wr"},
    {"rem-int/lit16", 0xd4, "wr"},
    {"and-int/lit16", 0xd5, "wr"},
    {"or-int/lit16", 0xd6, "wr"},
    {"xor-int/lit16", 0xd7, "wr"},
    {"add-int/lit8", 0xd8, "wr"},
    {"rsub-int/lit8", 0xd9, "wr"},
    {"mul-int/lit8", 0xda, "wr"},
    {"div-int/lit8", 0xdb, "wr"},
    {"rem-int/lit8", 0xdc, "wr"},
    {"and-int/lit8", 0xdd, "wr"},
    {"or-int/lit8", 0xde, "wr"},
    {"xor-int/lit8", 0xdf, "wr"},
    {"shl-int/lit8", 0xe0, "wr"},
    {"shr-int/lit8", 0xe1, "wr"},
    {"ushr-int/lit8", 0xe2, "wr"},
    {"invoke-polymorphic", 0xfa, "v"},
    {"invoke-polymorphic/range", 0xfb, "v"},
    {"invoke-custom", 0xfc, "v"},
    {"invoke-custom/range", 0xfd, "v"},
    {"const-method-handle", 0xfe, "w"},
    {"const-method-type", 0xff, "w"},
};

constexpr std::array<std::string_view, 6> kWhitelist = {
    "add-int", "sub-int", "mul-int", "xor-int", "and-int", "or-int"};

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

bool OpcodeInfo::is_conditional_branch() const {
  return starts_with(mnemonic, "if-");
}
bool OpcodeInfo::is_goto() const { return starts_with(mnemonic, "goto"); }
bool OpcodeInfo::is_switch() const {
  return mnemonic == "packed-switch" || mnemonic == "sparse-switch";
}
bool OpcodeInfo::is_return() const { return starts_with(mnemonic, "return"); }
bool OpcodeInfo::is_throw() const { return mnemonic == "throw"; }
bool OpcodeInfo::is_invoke() const { return starts_with(mnemonic, "invoke-"); }
bool OpcodeInfo::is_move_result() const {
  return starts_with(mnemonic, "move-result");
}
bool OpcodeInfo::ends_flow() const {
  return is_goto() || is_return() || is_throw();
}

const OpcodeInfo* find_opcode(std::string_view mnemonic) {
  static const auto index = [] {
    std::unordered_map<std::string_view, const OpcodeInfo*> m;
    for (const auto& op : kOpcodes) m.emplace(op.mnemonic, &op);
    return m;
  }();
  auto it = index.find(mnemonic);
  return it == index.end() ? nullptr : it->second;
}

std::span<const OpcodeInfo> all_opcodes() { return kOpcodes; }

const OpcodeTable& OpcodeTable::dalvik() {
  static const OpcodeTable table;
  return table;
}

OpcodeTable::OpcodeTable() {
  vocabulary_size_ = 256 + 2;
  names_.resize(vocabulary_size_);
  for (const auto& op : kOpcodes) {
    OpcodeId id = OpcodeId{op.dalvik_value} + 2;
    ids_.emplace(op.mnemonic, id);
    names_[id] = op.mnemonic;
  }
}

OpcodeId OpcodeTable::id_of(std::string_view mnemonic) const {
  auto it = ids_.find(mnemonic);
  return it == ids_.end() ? kUnknownOpcodeId : it->second;
}

std::optional<std::string_view> OpcodeTable::mnemonic_of(OpcodeId id) const {
  if (id >= names_.size() || names_[id].empty()) return std::nullopt;
  return names_[id];
}

std::span<const std::string_view> injectable_whitelist() { return kWhitelist; }

bool is_injectable(std::string_view mnemonic) {
  return std::find(kWhitelist.begin(), kWhitelist.end(), mnemonic) !=
         kWhitelist.end();
}

std::vector<OpcodeId> injectable_ids(const OpcodeTable& table) {
  std::vector<OpcodeId> ids;
  for (auto m : kWhitelist) ids.push_back(table.id_of(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace nopvis
