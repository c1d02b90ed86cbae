def pytest_addoption(parser):
    parser.addoption(
        "--acceptance",
        action="store_true",
        default=False,
        help="Run the acceptance tests at full size instead of the reduced defaults",
    )
