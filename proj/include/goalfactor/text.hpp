#pragma once

#include <string>
#include <string_view>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "goalfactor/common.hpp"

namespace goalfactor {

/// Dedup key for a property string: NFC, lowercase, internal whitespace
/// collapsed to one space, leading/trailing punctuation and whitespace removed.
inline std::string canonicalize(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) fail(ErrorCode::kInvalidArgument, "ICU NFC normalizer unavailable");

  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(src, status);
  if (U_FAILURE(status)) fail(ErrorCode::kInvalidArgument, "NFC normalization failed");
  normalized.toLower(icu::Locale::getRoot());
  // Lowercasing can denormalize a handful of code points.
  normalized = nfc->normalize(normalized, status);

  auto is_space = [](UChar32 c) { return u_isUWhiteSpace(c) != 0; };
  auto is_trim = [](UChar32 c) { return u_isUWhiteSpace(c) || u_ispunct(c); };

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < normalized.length(); i = normalized.moveIndex32(i, 1)) {
    const UChar32 c = normalized.char32At(i);
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !collapsed.isEmpty()) collapsed.append(UChar32(' '));
    pending_space = false;
    collapsed.append(c);
  }

  int32_t begin = 0;
  int32_t end = collapsed.length();
  while (begin < end && is_trim(collapsed.char32At(begin))) begin = collapsed.moveIndex32(begin, 1);
  while (end > begin) {
    const int32_t prev = collapsed.moveIndex32(end, -1);
    if (!is_trim(collapsed.char32At(prev))) break;
    end = prev;
  }

  std::string out;
  collapsed.tempSubStringBetween(begin, end).toUTF8String(out);
  return out;
}

}  // namespace goalfactor
