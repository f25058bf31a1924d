#include <gtest/gtest.h>

#include "statark/error.hpp"
#include "statark/tensor.hpp"

using statark::Tensor;

TEST(Tensor, ZeroFilledWithStaticShape) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.dim(-1), 3);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, ScalarHasOneElement) {
  Tensor s = Tensor::scalar(2.5f);
  EXPECT_EQ(s.rank(), 0);
  EXPECT_EQ(s.size(), 1);
  EXPECT_EQ(s[0], 2.5f);
}

TEST(Tensor, RejectsNonPositiveExtents) {
  EXPECT_THROW(Tensor({2, 0}), statark::ShapeError);
  EXPECT_THROW(Tensor({-1}), statark::ShapeError);
}

TEST(Tensor, RejectsDataLengthMismatch) { EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f}), statark::ShapeError); }

TEST(Tensor, AssignFromKeepsStorage) {
  Tensor a({2, 2});
  const float* before = a.data().data();
  a.assign_from(Tensor::filled({2, 2}, 3.0f));
  EXPECT_EQ(a.data().data(), before);
  EXPECT_EQ(a[3], 3.0f);
  EXPECT_THROW(a.assign_from(Tensor({4})), statark::ShapeError);
}

TEST(Tensor, CopiesAreIndependent) {
  Tensor a = Tensor::filled({3}, 1.0f);
  Tensor b = a;
  b[0] = 5.0f;
  EXPECT_EQ(a[0], 1.0f);
}

TEST(Tensor, AllocationCounterCountsCopiesNotMoves) {
  Tensor a({4});
  const uint64_t start = Tensor::allocation_count();
  Tensor b = a;
  EXPECT_EQ(Tensor::allocation_count(), start + 1);
  Tensor c = std::move(b);
  EXPECT_EQ(Tensor::allocation_count(), start + 1);
  EXPECT_EQ(c.size(), 4);
}

TEST(Tensor, ShapeToString) {
  EXPECT_EQ(statark::shape_to_string({1, 1, 8192}), "[1,1,8192]");
  EXPECT_EQ(statark::shape_to_string({}), "[]");
}
