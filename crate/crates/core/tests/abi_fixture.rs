mod common;

use ffibridge::{
    memory, parse_type, Address, CallEngine, ForeignFunction, HostValue, LibraryHandle, MemoryArena, Params,
    TypeDescriptor,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const CALLS: usize = 1000;

fn engines() -> Vec<CallEngine> {
    [CallEngine::Libffi, CallEngine::Direct]
        .into_iter()
        .filter(|e| e.is_available())
        .collect()
}

fn function(
    lib: &LibraryHandle,
    name: &str,
    ret: TypeDescriptor,
    params: impl Into<Params>,
    engine: CallEngine,
) -> ForeignFunction {
    ForeignFunction::with_engine(Some(lib), name, ret, params, engine).unwrap()
}

fn report(lib: &LibraryHandle, symbol: &str) -> usize {
    let f = ForeignFunction::new(Some(lib), symbol, TypeDescriptor::uint64(), Params::default()).unwrap();
    let none: [HostValue; 0] = [];
    f.invoke(none).unwrap().to_i64().unwrap() as usize
}

fn ty(src: &str) -> TypeDescriptor {
    parse_type(src, &|_| None).unwrap()
}

/// Offset of a dotted member path such as `mid.inner.c`.
fn offset_of(t: &TypeDescriptor, path: &str) -> usize {
    let mut current = t.clone();
    let mut offset = 0;
    for part in path.split('.') {
        let field = current.field(part).unwrap().clone();
        offset += field.offset;
        current = field.ty;
    }
    offset
}

fn fixture_types() -> Vec<(&'static str, TypeDescriptor, Vec<&'static str>)> {
    vec![
        ("point", ty("{x:f64, y:f64}"), vec!["x", "y"]),
        ("c8_i32", ty("{c:i8, d:i32}"), vec!["c", "d"]),
        ("i32_f64", ty("{a:i32, b:f64}"), vec!["a", "b"]),
        ("u8_u16_u8", ty("{a:u8, b:u16, c:u8}"), vec!["a", "b", "c"]),
        (
            "nested",
            ty("{tag:i8, p:{x:f64, y:f64}, s:i16}"),
            vec!["tag", "p", "s"],
        ),
        ("num", ty("union{i:i32, f:f32}"), vec![]),
        ("wide", ty("union{b:i8, x:f64}"), vec![]),
        ("named", ty("{name:[5 x i8], v:i64}"), vec!["name", "v"]),
        (
            "tagged",
            ty("{kind:u8, u:union{i:i32, d:f64, bytes:[3 x i8]}, tail:u16}"),
            vec!["kind", "u", "tail"],
        ),
        (
            "deep",
            ty("{mid:{a:i8, inner:{b:i16, c:i32}}, z:i8}"),
            vec!["mid", "mid.inner", "mid.inner.c", "z"],
        ),
        (
            "ptrs",
            ty("{flag:i8, p:ptr, s:cstr, f:f32}"),
            vec!["flag", "p", "s", "f"],
        ),
    ]
}

#[test]
fn layouts_match_compiler_reporters() {
    let Some(lib) = common::fixture("layouts_match_compiler_reporters") else {
        return;
    };
    let types = fixture_types();
    assert!(types.len() >= 8);
    for (name, t, fields) in types {
        assert_eq!(
            t.size(),
            report(&lib, &format!("ffib_sizeof_{name}")),
            "sizeof {name}"
        );
        assert_eq!(t.size() % t.alignment(), 0);
        for path in fields {
            let symbol = format!("ffib_offsetof_{name}_{}", path.replace('.', "_"));
            assert_eq!(
                offset_of(&t, path),
                report(&lib, &symbol),
                "offsetof {name}.{path}"
            );
        }
    }
    let tagged = &fixture_types()[8].1;
    assert_eq!(tagged.alignment(), report(&lib, "ffib_alignof_tagged"));
    let deep = &fixture_types()[9].1;
    assert_eq!(deep.alignment(), report(&lib, "ffib_alignof_deep"));
}

#[test]
fn add_i32_matches_mirror() {
    let Some(lib) = common::fixture("add_i32_matches_mirror") else {
        return;
    };
    assert!(!lib.resolve("ffib_add_i32").unwrap().is_null());
    let mut rng = StdRng::seed_from_u64(1);
    for engine in engines() {
        let add = function(
            &lib,
            "ffib_add_i32",
            TypeDescriptor::int32(),
            [TypeDescriptor::int32(), TypeDescriptor::int32()],
            engine,
        );
        assert_eq!(add.invoke([2, 3]).unwrap(), 5.into());
        for _ in 0..CALLS {
            let (a, b): (i32, i32) = (rng.gen(), rng.gen());
            assert_eq!(add.invoke([a, b]).unwrap(), a.wrapping_add(b).into());
        }
    }
}

macro_rules! xor_case {
    ($lib:expr, $engine:expr, $rng:expr, $sym:literal, $t:ty, $desc:expr, $mask:expr) => {{
        let f = function($lib, $sym, $desc, $desc, $engine);
        for _ in 0..CALLS {
            let x: $t = $rng.gen();
            assert_eq!(f.invoke([x]).unwrap(), (x ^ ($mask as $t)).into(), "{} {x}", $sym);
        }
    }};
}

#[test]
fn every_integer_width_matches_mirror() {
    let Some(lib) = common::fixture("every_integer_width_matches_mirror") else {
        return;
    };
    let mut rng = StdRng::seed_from_u64(2);
    for engine in engines() {
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_i8",
            i8,
            TypeDescriptor::int8(),
            0x5Au8
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_u8",
            u8,
            TypeDescriptor::uint8(),
            0xA5u8
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_i16",
            i16,
            TypeDescriptor::int16(),
            0x5A5Au16
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_u16",
            u16,
            TypeDescriptor::uint16(),
            0xA5A5u16
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_i32",
            i32,
            TypeDescriptor::int32(),
            0x5A5A5A5Au32
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_u32",
            u32,
            TypeDescriptor::uint32(),
            0xA5A5A5A5u32
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_i64",
            i64,
            TypeDescriptor::int64(),
            0x5A5A5A5A5A5A5A5Au64
        );
        xor_case!(
            &lib,
            engine,
            rng,
            "ffib_xor_u64",
            u64,
            TypeDescriptor::uint64(),
            0xA5A5A5A5A5A5A5A5u64
        );
    }
}

#[test]
fn floating_point_matches_mirror() {
    let Some(lib) = common::fixture("floating_point_matches_mirror") else {
        return;
    };
    let mut rng = StdRng::seed_from_u64(3);
    for engine in engines() {
        let f32f = function(
            &lib,
            "ffib_affine_f32",
            TypeDescriptor::float32(),
            [TypeDescriptor::float32(), TypeDescriptor::float32()],
            engine,
        );
        let f64f = function(
            &lib,
            "ffib_affine_f64",
            TypeDescriptor::float64(),
            [TypeDescriptor::float64(), TypeDescriptor::float64()],
            engine,
        );
        for _ in 0..CALLS {
            let (x, y): (f32, f32) = (rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
            let got = f32f.invoke([x, y]).unwrap();
            assert_eq!(got, HostValue::Real((x * y + 1.0f32) as f64));
            let (x, y): (f64, f64) = (rng.gen_range(-1e6..1e6), rng.gen_range(-1e6..1e6));
            assert_eq!(f64f.invoke([x, y]).unwrap(), HostValue::Real(x * y + 1.0));
        }
    }
}

#[test]
fn mixed_register_classes_match_mirror() {
    let Some(lib) = common::fixture("mixed_register_classes_match_mirror") else {
        return;
    };
    let mut rng = StdRng::seed_from_u64(4);
    for engine in engines() {
        let mixed = function(
            &lib,
            "ffib_mixed",
            TypeDescriptor::float64(),
            [
                TypeDescriptor::int8(),
                TypeDescriptor::float64(),
                TypeDescriptor::uint16(),
                TypeDescriptor::float32(),
                TypeDescriptor::int64(),
                TypeDescriptor::int32(),
                TypeDescriptor::float64(),
                TypeDescriptor::uint8(),
            ],
            engine,
        );
        let weighted13 = function(
            &lib,
            "ffib_weighted13",
            TypeDescriptor::int64(),
            vec![TypeDescriptor::int64(); 13],
            engine,
        );
        let weighted11 = function(
            &lib,
            "ffib_weighted11",
            TypeDescriptor::float64(),
            vec![TypeDescriptor::float64(); 11],
            engine,
        );
        for _ in 0..CALLS {
            let a: i8 = rng.gen();
            let b: f64 = rng.gen_range(-1e3..1e3);
            let c: u16 = rng.gen();
            let d: f32 = rng.gen_range(-1e3..1e3);
            let e: i64 = rng.gen_range(-1_000_000..1_000_000);
            let f: i32 = rng.gen();
            let g: f64 = rng.gen_range(-1e3..1e3);
            let h: u8 = rng.gen();
            let mut acc = a as f64;
            acc += b;
            acc += c as f64;
            acc += d as f64;
            acc += e as f64;
            acc += f as f64;
            acc += g;
            acc += h as f64;
            let args: Vec<HostValue> = vec![
                a.into(),
                b.into(),
                c.into(),
                d.into(),
                e.into(),
                f.into(),
                g.into(),
                h.into(),
            ];
            assert_eq!(mixed.invoke(args).unwrap(), HostValue::Real(acc));

            let ints: Vec<i64> = (0..13)
                .map(|_| rng.gen_range(-1_000_000_000..1_000_000_000))
                .collect();
            let expected: i64 = ints.iter().enumerate().map(|(i, v)| (i as i64 + 1) * v).sum();
            assert_eq!(weighted13.invoke(ints.clone()).unwrap(), expected.into());

            let reals: Vec<f64> = (0..11).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let mut expected = reals[0];
            for (i, v) in reals.iter().enumerate().skip(1) {
                expected += (i as f64 + 1.0) * v;
            }
            assert_eq!(weighted11.invoke(reals).unwrap(), HostValue::Real(expected));
        }
    }
}

#[test]
fn strings_in_and_out() {
    let Some(lib) = common::fixture("strings_in_and_out") else {
        return;
    };
    let mut rng = StdRng::seed_from_u64(5);
    for engine in engines() {
        let strlen = function(
            &lib,
            "ffib_strlen",
            TypeDescriptor::uint64(),
            TypeDescriptor::cstring(),
            engine,
        );
        assert_eq!(strlen.invoke(["Hello, world!"]).unwrap(), 13u64.into());
        for _ in 0..CALLS {
            let len = rng.gen_range(0..64);
            let text: Vec<u8> = (0..len).map(|_| rng.gen_range(1..=255u8)).collect();
            assert_eq!(
                strlen.invoke([HostValue::Text(text)]).unwrap(),
                (len as u64).into()
            );
        }
        let none: [HostValue; 0] = [];
        let greet = function(
            &lib,
            "ffib_greeting",
            TypeDescriptor::cstring(),
            Params::default(),
            engine,
        );
        assert_eq!(
            greet.invoke(none.clone()).unwrap(),
            "Hello from the fixture".into()
        );
        let null = function(
            &lib,
            "ffib_null_string",
            TypeDescriptor::cstring(),
            Params::default(),
            engine,
        );
        assert_eq!(null.invoke(none).unwrap(), HostValue::Null);
    }
}

#[test]
fn arrays_and_structs_by_address() {
    let Some(lib) = common::fixture("arrays_and_structs_by_address") else {
        return;
    };
    let mut rng = StdRng::seed_from_u64(6);
    let arena = MemoryArena::new();
    let point = ty("{x:f64, y:f64}");
    let ptrs = ty("{flag:i8, p:ptr, s:cstr, f:f32}");
    for engine in engines() {
        let sum = function(
            &lib,
            "ffib_sum_f64",
            TypeDescriptor::float64(),
            [TypeDescriptor::address(), TypeDescriptor::int64()],
            engine,
        );
        let norm2 = function(
            &lib,
            "ffib_point_norm2",
            TypeDescriptor::float64(),
            TypeDescriptor::address(),
            engine,
        );
        let field = function(
            &lib,
            "ffib_ptrs_field",
            TypeDescriptor::float64(),
            [TypeDescriptor::address(), TypeDescriptor::int32()],
            engine,
        );
        for _ in 0..CALLS {
            let len = rng.gen_range(1..32usize);
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let array = TypeDescriptor::make_array(TypeDescriptor::float64(), len).unwrap();
            let boxed = arena.boxed(&HostValue::reals(&values), &array).unwrap();
            let mut expected = 0.0;
            for v in &values {
                expected += v;
            }
            let got = sum
                .invoke([boxed.clone().into(), ffibridge::Arg::from(len as i64)])
                .unwrap();
            assert_eq!(got, HostValue::Real(expected));
            boxed.block().release();

            let (x, y): (f64, f64) = (rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
            let p = arena
                .boxed(&HostValue::record([("x", x.into()), ("y", y.into())]), &point)
                .unwrap();
            assert_eq!(norm2.invoke([&p]).unwrap(), HostValue::Real(x * x + y * y));
            p.block().release();

            let flag: i8 = rng.gen();
            let f: f32 = rng.gen_range(-1e3..1e3);
            let rec = HostValue::record([
                ("flag", flag.into()),
                ("p", HostValue::Null),
                ("s", "abc".into()),
                ("f", f.into()),
            ]);
            let r = arena.boxed(&rec, &ptrs).unwrap();
            let host = r.decode().unwrap();
            let HostValue::Record(fields) = host else { panic!() };
            assert_eq!(
                field
                    .invoke([ffibridge::Arg::from(&r), 0.into()])
                    .unwrap()
                    .to_f64(),
                fields["flag"].to_f64()
            );
            assert_eq!(
                field
                    .invoke([ffibridge::Arg::from(&r), 3.into()])
                    .unwrap()
                    .to_f64(),
                fields["f"].to_f64()
            );
            r.block().release();
        }
    }
}

#[test]
fn nested_struct_fields_read_back_by_callee() {
    let Some(lib) = common::fixture("nested_struct_fields_read_back_by_callee") else {
        return;
    };
    let nested = ty("{tag:i8, p:{x:f64, y:f64}, s:i16}");
    let f = function(
        &lib,
        "ffib_nested_field",
        TypeDescriptor::int64(),
        [TypeDescriptor::address(), TypeDescriptor::int32()],
        CallEngine::preferred().unwrap(),
    );
    let arena = MemoryArena::new();
    let value = HostValue::record([
        ("tag", (-5).into()),
        ("p", HostValue::record([("x", 42.0.into()), ("y", 0.5.into())])),
        ("s", 1234.into()),
    ]);
    let fv = arena.boxed(&value, &nested).unwrap();
    for (which, expected) in [(0, -5), (1, 42), (2, 1234)] {
        assert_eq!(
            f.invoke([ffibridge::Arg::from(&fv), which.into()]).unwrap(),
            expected.into()
        );
    }
}

#[test]
fn callee_writes_into_host_block() {
    let Some(lib) = common::fixture("callee_writes_into_host_block") else {
        return;
    };
    let fill = function(
        &lib,
        "ffib_fill_seq",
        TypeDescriptor::void(),
        [TypeDescriptor::address(), TypeDescriptor::int64()],
        CallEngine::preferred().unwrap(),
    );
    let arena = MemoryArena::new();
    let block = arena.allocate(10 * 4).unwrap();
    assert_eq!(
        fill.invoke([ffibridge::Arg::from(&block), 10i64.into()]).unwrap(),
        HostValue::Null
    );
    let array = TypeDescriptor::make_array(TypeDescriptor::int32(), 10).unwrap();
    let expected: Vec<HostValue> = (0..10).map(HostValue::from).collect();
    assert_eq!(block.read_at(0, &array).unwrap(), HostValue::List(expected));
}

#[test]
fn global_counter_through_raw_reads() {
    let Some(lib) = common::fixture("global_counter_through_raw_reads") else {
        return;
    };
    let counter = lib.resolve("ffib_counter").unwrap();
    let bump = function(
        &lib,
        "ffib_bump",
        TypeDescriptor::int32(),
        Params::default(),
        CallEngine::preferred().unwrap(),
    );
    let read = || unsafe { memory::read_raw(counter, 0, &TypeDescriptor::int32()) }.unwrap();
    let before = read().to_i64().unwrap();
    let none: [HostValue; 0] = [];
    let returned = bump.invoke(none).unwrap();
    assert_eq!(returned, (before + 1).into());
    assert_eq!(read(), (before + 1).into());
}

#[test]
fn invoke_raw_agrees_with_invoke() {
    let Some(lib) = common::fixture("invoke_raw_agrees_with_invoke") else {
        return;
    };
    let mut rng = StdRng::seed_from_u64(7);
    let arena = MemoryArena::new();
    for engine in engines() {
        let add = function(
            &lib,
            "ffib_add_i32",
            TypeDescriptor::int32(),
            [TypeDescriptor::int32(), TypeDescriptor::int32()],
            engine,
        );
        for _ in 0..CALLS {
            let (a, b): (i32, i32) = (rng.gen(), rng.gen());
            let ba = arena.boxed(&a.into(), &TypeDescriptor::int32()).unwrap();
            let bb = arena.boxed(&b.into(), &TypeDescriptor::int32()).unwrap();
            let raw = unsafe { add.invoke_raw(&arena, &[ba.address(), bb.address()]) }.unwrap();
            assert_eq!(raw.ty(), &TypeDescriptor::int32());
            assert_eq!(raw.decode().unwrap(), add.invoke([a, b]).unwrap());
            for fv in [ba, bb, raw] {
                fv.block().release();
            }
        }
        let err = unsafe { add.invoke_raw(&arena, &[Address::NULL]) };
        assert!(matches!(err, Err(ffibridge::Error::ArityMismatch { .. })));
    }
    assert_eq!(arena.live_blocks(), 0);
}

#[test]
fn same_path_opened_twice_resolves_identically() {
    let Some(path) = common::fixture_path() else {
        return;
    };
    let a = LibraryHandle::open("fixture-a", Some(&path)).unwrap();
    let b = LibraryHandle::open("fixture-b", Some(&path)).unwrap();
    for symbol in ["ffib_add_i32", "ffib_counter", "ffib_sizeof_point"] {
        assert_eq!(a.resolve(symbol).unwrap(), b.resolve(symbol).unwrap());
    }
    a.close();
    assert!(b.resolve("ffib_add_i32").is_ok());
}

#[test]
fn closed_library_functions_refuse_calls() {
    let Some(path) = common::fixture_path() else {
        return;
    };
    let lib = LibraryHandle::open("fixture", Some(&path)).unwrap();
    let add = ForeignFunction::new(
        Some(&lib),
        "ffib_add_i32",
        TypeDescriptor::int32(),
        [TypeDescriptor::int32(), TypeDescriptor::int32()],
    )
    .unwrap();
    lib.close();
    assert!(matches!(
        add.invoke([1, 2]),
        Err(ffibridge::Error::HandleClosed(_))
    ));
}

#[test]
fn library_found_through_search_path() {
    let Some(path) = common::fixture_path() else {
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(&path, dir.path().join("libffib_copy.so")).unwrap();
    let search = ffibridge::SearchPath::new([dir.path().to_path_buf()]);
    let lib = LibraryHandle::open_with("ffib_copy", None, &search).unwrap();
    assert!(lib.resolve("ffib_add_i32").is_ok());
    assert_eq!(
        lib.source(),
        &ffibridge::loader::LibrarySource::File(dir.path().join("libffib_copy.so"))
    );
}
