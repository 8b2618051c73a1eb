fn main() {
    println!("pointseg");
}
