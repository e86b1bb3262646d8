from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    app_name: str = "SAV Scan"
    debug: bool = False
    database_url: str = "sqlite:///./savscan.db"
    log_level: str = "INFO"

    # Genuine source of unspoofed probes
    scanner_v4: str = "192.0.2.53"
    scanner_v6: str = "2001:db8:53::53"

    # Default measurement zones
    apex_v4only: str = "drakkardnsv4.com"
    apex_v6only: str = "drakkardnsv6.com"
    sub_v4: str = "v4"
    sub_v6: str = "v6"

    # Planner
    skip_boundary_hosts: bool = True
    v6_spread_length: int = 48

    # version.bind answers that carry no software information
    version_bind_denylist: list[str] = [
        "none",
        "none-of-your-business",
        "not available",
        "not currently available",
        "unknown",
        "go away",
        "secret",
        "refused",
    ]

    class Config:
        env_file = ".env"
        env_prefix = "SAVSCAN_"


settings = Settings()
