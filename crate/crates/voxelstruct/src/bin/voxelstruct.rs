fn main() {
    std::process::exit(voxelstruct::cli::main());
}
