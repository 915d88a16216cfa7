#include <gtest/gtest.h>

#include <vector>

#include "oracles.hpp"
#include "vasa/mask.hpp"

using vasa::EditOp;
using vasa::Errc;
using vasa::RasterMask;

namespace {

RasterMask rows(int r0, int r1) { return oracle::to_mask(oracle::rows(4, 4, r0, r1)); }

Errc error_of(auto&& f) {
  try {
    f();
  } catch (const vasa::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no vasa::Error thrown";
  return Errc::IoFailure;
}

}  // namespace

TEST(RasterMask, RejectsNonPositiveDimensions) {
  EXPECT_EQ(error_of([] { RasterMask(0, 4); }), Errc::InvalidArgument);
  EXPECT_EQ(error_of([] { RasterMask(4, -1); }), Errc::InvalidArgument);
}

TEST(RasterMask, GetSetAndBounds) {
  RasterMask m(5, 3);
  m.set(2, 4);
  EXPECT_TRUE(m.get(2, 4));
  EXPECT_FALSE(m.get(0, 0));
  EXPECT_EQ(m.area(), 1u);
  m.set(2, 4, false);
  EXPECT_TRUE(m.empty());
  EXPECT_EQ(error_of([&] { m.get(3, 0); }), Errc::InvalidArgument);
  EXPECT_EQ(error_of([&] { m.set(0, 5); }), Errc::InvalidArgument);
}

TEST(RasterMask, FullMaskKeepsTailClear) {
  const auto m = RasterMask::full(7, 9);  // 63 px, one partial word
  EXPECT_EQ(m.area(), 63u);
  EXPECT_EQ(vasa::complement(m).area(), 0u);
}

TEST(Union, Examples) {
  const auto a = rows(0, 0);
  EXPECT_EQ(vasa::unite(a, RasterMask(4, 4)), a);
  EXPECT_EQ(vasa::unite(a, a), a);
  const auto u = vasa::unite(rows(0, 0), rows(1, 1));
  EXPECT_EQ(u, rows(0, 1));
  EXPECT_EQ(u.area(), 8u);
}

TEST(Subtract, Examples) {
  const auto a = rows(0, 2);
  EXPECT_TRUE(vasa::subtract(a, a).empty());
  EXPECT_EQ(vasa::subtract(a, RasterMask(4, 4)), a);
  const auto d = vasa::subtract(a, rows(1, 1));
  EXPECT_EQ(d, vasa::unite(rows(0, 0), rows(2, 2)));
  EXPECT_EQ(d.area(), 8u);
}

TEST(Intersect, Examples) {
  const auto a = rows(0, 1);
  EXPECT_EQ(vasa::intersect(a, a), a);
  EXPECT_TRUE(vasa::intersect(a, RasterMask(4, 4)).empty());
  const auto i = vasa::intersect(rows(0, 1), rows(1, 2));
  EXPECT_EQ(i, rows(1, 1));
  EXPECT_EQ(i.area(), 4u);
  EXPECT_EQ(vasa::intersection_area(rows(0, 1), rows(1, 2)), 4u);
}

TEST(Area, Examples) {
  EXPECT_EQ(vasa::area(RasterMask(4, 4)), 0u);
  EXPECT_EQ(vasa::area(RasterMask::full(4, 4)), 16u);
  EXPECT_EQ(vasa::area(rows(0, 1)), 8u);
}

TEST(BinaryOps, DimensionMismatch) {
  const RasterMask a(4, 4), b(4, 5);
  EXPECT_EQ(error_of([&] { vasa::unite(a, b); }), Errc::DimensionMismatch);
  EXPECT_EQ(error_of([&] { vasa::subtract(a, b); }), Errc::DimensionMismatch);
  EXPECT_EQ(error_of([&] { vasa::intersect(a, b); }), Errc::DimensionMismatch);
  EXPECT_EQ(error_of([&] { vasa::intersection_area(a, b); }), Errc::DimensionMismatch);
}

TEST(MergeAll, Examples) {
  const auto a = rows(2, 3);
  const std::vector<RasterMask> one{a};
  EXPECT_EQ(vasa::merge_all(one), a);
  const std::vector<RasterMask> with_empty{a, RasterMask(4, 4)};
  EXPECT_EQ(vasa::merge_all(with_empty), a);
  const std::vector<RasterMask> three{rows(0, 0), rows(1, 1), rows(2, 2)};
  const auto m = vasa::merge_all(three);
  EXPECT_EQ(m, rows(0, 2));
  EXPECT_EQ(m.area(), 12u);
}

TEST(MergeAll, Errors) {
  EXPECT_EQ(error_of([] { vasa::merge_all({}); }), Errc::EmptyInput);
  const std::vector<RasterMask> mixed{RasterMask(4, 4), RasterMask(3, 4)};
  EXPECT_EQ(error_of([&] { vasa::merge_all(mixed); }), Errc::DimensionMismatch);
}

TEST(ApplyEdit, Examples) {
  const auto a = rows(1, 2);
  const std::vector<RasterMask> sel{a};
  EXPECT_EQ(vasa::apply_edit(RasterMask(4, 4), EditOp::Add, sel), a);
  EXPECT_TRUE(vasa::apply_edit(a, EditOp::Remove, sel).empty());
  EXPECT_EQ(vasa::apply_edit(rows(0, 0), EditOp::Replace, sel), a);
}

TEST(ApplyEdit, HeadMinusEarsAndEyes) {
  // Small hand-drawn fixture: head is a 6x6 block, ears poke in at the top
  // corners, eyes are two single pixels.
  oracle::Grid head(8, 8), ears(8, 8), eyes(8, 8);
  for (int r = 1; r <= 6; ++r) {
    for (int c = 1; c <= 6; ++c) head.at(r, c) = 1;
  }
  for (int r = 0; r <= 2; ++r) {
    ears.at(r, 1) = ears.at(r, 6) = 1;
  }
  eyes.at(3, 2) = eyes.at(3, 5) = 1;
  oracle::Grid expected(8, 8);
  for (std::size_t i = 0; i < expected.px.size(); ++i) {
    expected.px[i] = head.px[i] && !ears.px[i] && !eyes.px[i];
  }
  const std::vector<RasterMask> sel{oracle::to_mask(ears), oracle::to_mask(eyes)};
  const auto out = vasa::apply_edit(oracle::to_mask(head), EditOp::Remove, sel);
  EXPECT_EQ(out, oracle::to_mask(expected));
  EXPECT_EQ(out.area(), 36u - 4u - 2u);
}

TEST(ApplyEdit, DoesNotMutateInput) {
  const auto working = rows(0, 1);
  const auto before = working;
  const std::vector<RasterMask> sel{rows(1, 3)};
  for (auto op : {EditOp::Add, EditOp::Remove, EditOp::Replace}) {
    (void)vasa::apply_edit(working, op, sel);
    EXPECT_EQ(working, before);
  }
}

TEST(ApplyEdit, Errors) {
  const RasterMask w(4, 4);
  EXPECT_EQ(error_of([&] { vasa::apply_edit(w, EditOp::Add, {}); }), Errc::EmptyInput);
  const std::vector<RasterMask> wrong{RasterMask(5, 4)};
  EXPECT_EQ(error_of([&] { vasa::apply_edit(w, EditOp::Replace, wrong); }), Errc::DimensionMismatch);
}

TEST(EditOp, NamesRoundTrip) {
  for (auto op : {EditOp::Add, EditOp::Remove, EditOp::Replace}) {
    EXPECT_EQ(vasa::parse_edit_op(vasa::to_string(op)), op);
  }
  EXPECT_FALSE(vasa::parse_edit_op("intersect").has_value());
  EXPECT_FALSE(vasa::parse_edit_op("Add").has_value());
}

TEST(Digest, SensitiveToBitsAndShape) {
  auto a = rows(0, 0);
  auto b = a;
  EXPECT_EQ(vasa::digest(a), vasa::digest(b));
  b.set(3, 3);
  EXPECT_NE(vasa::digest(a), vasa::digest(b));
  EXPECT_NE(vasa::digest(RasterMask(4, 2)), vasa::digest(RasterMask(2, 4)));
}
