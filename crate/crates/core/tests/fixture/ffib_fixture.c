/* Native test fixture: functions with pure host mirrors plus compiler
 * reported sizeof/offsetof values for every fixture aggregate. */
#include <stddef.h>
#include <stdint.h>
#include <string.h>

struct point { double x; double y; };
struct c8_i32 { char c; int32_t d; };
struct i32_f64 { int32_t a; double b; };
struct u8_u16_u8 { uint8_t a; uint16_t b; uint8_t c; };
struct nested { char tag; struct point p; int16_t s; };
union num { int32_t i; float f; };
union wide { char b; double x; };
struct named { char name[5]; int64_t v; };
struct tagged {
    uint8_t kind;
    union { int32_t i; double d; char bytes[3]; } u;
    uint16_t tail;
};
struct deep {
    struct { char a; struct { int16_t b; int32_t c; } inner; } mid;
    char z;
};
struct ptrs { char flag; void *p; const char *s; float f; };

#define SIZEOF(T, N) size_t ffib_sizeof_##N(void) { return sizeof(T); }
#define OFFSETOF(T, N, F, G) size_t ffib_offsetof_##N##_##G(void) { return offsetof(T, F); }

SIZEOF(struct point, point)
OFFSETOF(struct point, point, x, x)
OFFSETOF(struct point, point, y, y)
SIZEOF(struct c8_i32, c8_i32)
OFFSETOF(struct c8_i32, c8_i32, c, c)
OFFSETOF(struct c8_i32, c8_i32, d, d)
SIZEOF(struct i32_f64, i32_f64)
OFFSETOF(struct i32_f64, i32_f64, a, a)
OFFSETOF(struct i32_f64, i32_f64, b, b)
SIZEOF(struct u8_u16_u8, u8_u16_u8)
OFFSETOF(struct u8_u16_u8, u8_u16_u8, a, a)
OFFSETOF(struct u8_u16_u8, u8_u16_u8, b, b)
OFFSETOF(struct u8_u16_u8, u8_u16_u8, c, c)
SIZEOF(struct nested, nested)
OFFSETOF(struct nested, nested, tag, tag)
OFFSETOF(struct nested, nested, p, p)
OFFSETOF(struct nested, nested, s, s)
SIZEOF(union num, num)
SIZEOF(union wide, wide)
SIZEOF(struct named, named)
OFFSETOF(struct named, named, name, name)
OFFSETOF(struct named, named, v, v)
SIZEOF(struct tagged, tagged)
OFFSETOF(struct tagged, tagged, kind, kind)
OFFSETOF(struct tagged, tagged, u, u)
OFFSETOF(struct tagged, tagged, tail, tail)
SIZEOF(struct deep, deep)
OFFSETOF(struct deep, deep, mid, mid)
OFFSETOF(struct deep, deep, mid.inner, mid_inner)
OFFSETOF(struct deep, deep, mid.inner.c, mid_inner_c)
OFFSETOF(struct deep, deep, z, z)
SIZEOF(struct ptrs, ptrs)
OFFSETOF(struct ptrs, ptrs, flag, flag)
OFFSETOF(struct ptrs, ptrs, p, p)
OFFSETOF(struct ptrs, ptrs, s, s)
OFFSETOF(struct ptrs, ptrs, f, f)

size_t ffib_alignof_tagged(void) { return _Alignof(struct tagged); }
size_t ffib_alignof_deep(void) { return _Alignof(struct deep); }

int32_t ffib_add_i32(int32_t a, int32_t b) { return (int32_t)((uint32_t)a + (uint32_t)b); }

double ffib_sum_f64(const double *values, int64_t len)
{
    double total = 0.0;
    for (int64_t i = 0; i < len; i++)
        total += values[i];
    return total;
}

void ffib_fill_seq(int32_t *out, int64_t len)
{
    for (int64_t i = 0; i < len; i++)
        out[i] = (int32_t)i;
}

uint64_t ffib_strlen(const char *s) { return strlen(s); }

double ffib_point_norm2(const struct point *p) { return p->x * p->x + p->y * p->y; }

/* Returns one field of a struct ptrs, widened to double (0 flag, 3 f). */
double ffib_ptrs_field(const struct ptrs *r, int32_t which)
{
    switch (which) {
    case 0: return (double)r->flag;
    case 3: return (double)r->f;
    default: return -1.0;
    }
}

int64_t ffib_nested_field(const struct nested *n, int32_t which)
{
    switch (which) {
    case 0: return n->tag;
    case 1: return (int64_t)n->p.x;
    case 2: return n->s;
    default: return -1;
    }
}

int32_t ffib_counter = 0;
int32_t ffib_bump(void) { return ++ffib_counter; }

int8_t ffib_xor_i8(int8_t x) { return (int8_t)(x ^ 0x5A); }
uint8_t ffib_xor_u8(uint8_t x) { return (uint8_t)(x ^ 0xA5); }
int16_t ffib_xor_i16(int16_t x) { return (int16_t)(x ^ 0x5A5A); }
uint16_t ffib_xor_u16(uint16_t x) { return (uint16_t)(x ^ 0xA5A5); }
int32_t ffib_xor_i32(int32_t x) { return x ^ 0x5A5A5A5A; }
uint32_t ffib_xor_u32(uint32_t x) { return x ^ 0xA5A5A5A5u; }
int64_t ffib_xor_i64(int64_t x) { return x ^ 0x5A5A5A5A5A5A5A5ALL; }
uint64_t ffib_xor_u64(uint64_t x) { return x ^ 0xA5A5A5A5A5A5A5A5ULL; }

float ffib_affine_f32(float x, float y)
{
    float t = x * y;
    return t + 1.0f;
}

double ffib_affine_f64(double x, double y)
{
    double t = x * y;
    return t + 1.0;
}

/* Integer and SSE arguments interleaved. */
double ffib_mixed(int8_t a, double b, uint16_t c, float d, int64_t e, int32_t f, double g, uint8_t h)
{
    double acc = a;
    acc += b;
    acc += c;
    acc += d;
    acc += (double)e;
    acc += f;
    acc += g;
    acc += h;
    return acc;
}

/* Thirteen integer-class arguments: seven go on the stack. */
int64_t ffib_weighted13(int64_t a0, int64_t a1, int64_t a2, int64_t a3, int64_t a4, int64_t a5,
                        int64_t a6, int64_t a7, int64_t a8, int64_t a9, int64_t a10, int64_t a11,
                        int64_t a12)
{
    return a0 + 2 * a1 + 3 * a2 + 4 * a3 + 5 * a4 + 6 * a5 + 7 * a6 + 8 * a7 + 9 * a8
        + 10 * a9 + 11 * a10 + 12 * a11 + 13 * a12;
}

/* Eleven doubles: three overflow the SSE registers. */
double ffib_weighted11(double d0, double d1, double d2, double d3, double d4, double d5,
                       double d6, double d7, double d8, double d9, double d10)
{
    double acc = d0;
    acc += 2.0 * d1;
    acc += 3.0 * d2;
    acc += 4.0 * d3;
    acc += 5.0 * d4;
    acc += 6.0 * d5;
    acc += 7.0 * d6;
    acc += 8.0 * d7;
    acc += 9.0 * d8;
    acc += 10.0 * d9;
    acc += 11.0 * d10;
    return acc;
}

const char *ffib_greeting(void) { return "Hello from the fixture"; }
const char *ffib_null_string(void) { return NULL; }
