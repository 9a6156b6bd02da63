use std::ffi::{c_char, CStr, CString};
use std::process::Command;
use std::ptr;

use ocstab_ffi::*;

const CONFIG: &str = "rng_seed = 3\n[mesh]\nn_cells_per_side = 8\n\
[coefficients]\nc3 = \"1\"\n[objective]\ny_d = \"1\"\n\
[bounds]\nu_a = 0.0\nu_b = 2.0\n[optimizer]\nrestart_count = 2\n";

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { ocstab_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn problem(text: &str) -> *mut OcstabProblem {
    let c = CString::new(text).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ocstab_problem_from_toml(c.as_ptr(), &mut p) }, OcstabStatus::Ok);
    p
}

#[test]
fn state_solve_through_handles() {
    let p = problem(CONFIG);
    let mut n = 0usize;
    unsafe {
        assert_eq!(ocstab_problem_node_count(p, &mut n), OcstabStatus::Ok);
        assert_eq!(n, 81);
        let mut xy = vec![0.0; 2 * n];
        assert_eq!(ocstab_problem_nodes(p, xy.as_mut_ptr(), xy.len()), OcstabStatus::Ok);
        assert_eq!(&xy[2..4], &[0.125, 0.0]);

        let u = vec![1.0; n];
        let mut y = vec![0.0; n];
        let mut iters = 0usize;
        let status = ocstab_solve_state(p, u.as_ptr(), y.as_mut_ptr(), n, &mut iters);
        assert_eq!(status, OcstabStatus::Ok);
        assert!(iters >= 2);
        assert!(y.iter().all(|&v| v >= 0.0));
        assert!(y.iter().any(|&v| v > 0.01));
        ocstab_problem_free(p);
    }
}

#[test]
fn objective_and_control_solve() {
    let p = problem(CONFIG);
    unsafe {
        let mut n = 0usize;
        ocstab_problem_node_count(p, &mut n);
        let u = vec![0.5; n];
        let mut j = 0.0;
        let mut grad = vec![0.0; n];
        let status = ocstab_objective(p, u.as_ptr(), n, &mut j, grad.as_mut_ptr());
        assert_eq!(status, OcstabStatus::Ok);
        assert!(j > 0.0);
        // Raising the control lowers the tracking error towards y_d = 1.
        assert!(grad.iter().any(|&g| g < 0.0));

        let mut s = ptr::null_mut();
        assert_eq!(ocstab_solve_control(p, 11, &mut s), OcstabStatus::Ok);
        let (mut obj, mut res, mut conv) = (0.0, 0.0, false);
        assert_eq!(ocstab_solution_summary(s, &mut obj, &mut res, &mut conv), OcstabStatus::Ok);
        assert!(conv, "residual {res}");
        assert!(obj < j);
        let mut u_opt = vec![0.0; n];
        assert_eq!(ocstab_solution_control(s, u_opt.as_mut_ptr(), n), OcstabStatus::Ok);
        assert!(u_opt.iter().all(|&v| (0.0..=2.0).contains(&v)));
        let mut y = vec![0.0; n];
        assert_eq!(ocstab_solution_state(s, y.as_mut_ptr(), n), OcstabStatus::Ok);
        ocstab_solution_free(s);
        ocstab_problem_free(p);
    }
}

#[test]
fn errors_are_reported_per_call() {
    unsafe {
        let mut p = ptr::null_mut();
        let bad = CString::new("[mesh]\nn_cells_per_side = 4\n[bounds]\nu_a = 1\nu_b = 0\n").unwrap();
        assert_eq!(ocstab_problem_from_toml(bad.as_ptr(), &mut p), OcstabStatus::Config);
        assert!(p.is_null());
        assert!(last_error().contains("bounds"));

        assert_eq!(ocstab_problem_from_toml(ptr::null(), &mut p), OcstabStatus::NullPointer);
        assert!(last_error().contains("toml"));

        let p = problem(CONFIG);
        let mut n = 0usize;
        ocstab_problem_node_count(p, &mut n);
        let u = vec![0.0; n];
        let mut short = vec![0.0; n - 1];
        let status = ocstab_solve_state(p, u.as_ptr(), short.as_mut_ptr(), n - 1, ptr::null_mut());
        assert_eq!(status, OcstabStatus::InvalidArgument);
        let mut y = vec![0.0; n];
        let mut xy = vec![0.0; n];
        assert_eq!(ocstab_problem_nodes(p, xy.as_mut_ptr(), n), OcstabStatus::BufferTooSmall);
        let outside = vec![5.0; n];
        let mut j = 0.0;
        let status = ocstab_objective(p, outside.as_ptr(), n, &mut j, y.as_mut_ptr());
        assert_ne!(status, OcstabStatus::Ok);
        ocstab_problem_free(p);
        ocstab_problem_free(ptr::null_mut());
        ocstab_solution_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_safely() {
    unsafe {
        let mut p = ptr::null_mut();
        ocstab_problem_from_toml(ptr::null(), &mut p);
        let full = ocstab_last_error(ptr::null_mut(), 0);
        let mut buf = [1 as c_char; 4];
        assert_eq!(ocstab_last_error(buf.as_mut_ptr(), 4), full);
        assert_eq!(buf[3], 0);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ocstab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = std::fs::read_to_string(format!("{dir}/include/ocstab.h")).unwrap();
    for name in [
        "typedef struct OcstabProblem OcstabProblem;",
        "OCSTAB_STATUS_BUFFER_TOO_SMALL = 5",
        "ocstab_solve_control(const struct OcstabProblem *problem",
        "size_t ocstab_last_error(char *buf, size_t len);",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    let probe = std::env::temp_dir().join("ocstab_header_probe.c");
    std::fs::write(&probe, "#include \"ocstab.h\"\nint main(void) { return OCSTAB_STATUS_OK; }\n")
        .unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(&probe)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler ({e}); skipped the compile check"),
    }
}
