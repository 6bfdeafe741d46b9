"""
Главная точка входа симулятора и сканера топологии.
"""
import sys

from topoprobe.cli import main


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nПрограмма прервана пользователем")
        sys.exit(1)
