from spectraloss.cli import main

main()
