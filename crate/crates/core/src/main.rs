// The training loop frees and reallocates large tape buffers every batch;
// the system allocator hands them back to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(nef_tgn::cli::run_from_args(std::env::args_os()));
}
