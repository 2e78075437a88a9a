from pleass.cli import main

main()
